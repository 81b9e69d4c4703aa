#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "exchanger/tensor.hpp"

namespace exchanger {

// Tensor block format shared by checkpoint and dataset files: a UTF-8
// header line "shape: d0,d1,...\n" followed by the row-major payload
// as little-endian IEEE-754 float32.
void write_tensor_block(std::ostream& os, const Shape& shape, const std::vector<float>& values);
void read_tensor_block(std::istream& is, Shape& shape, std::vector<float>& values);

template <typename S>
void write_tensor_block(std::ostream& os, const TensorT<S>& t) {
    if constexpr (std::is_same_v<S, float>) {
        write_tensor_block(os, t.shape, t.values);
    } else {
        std::vector<float> v(t.values.begin(), t.values.end());
        write_tensor_block(os, t.shape, v);
    }
}

// Raw little-endian scalar helpers used by the dataset format.
void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, const std::uint8_t* data, std::size_t n);
std::uint32_t read_u32(std::istream& is, const std::string& field);
std::int32_t read_i32(std::istream& is, const std::string& field);
float read_f32(std::istream& is, const std::string& field);
void read_bytes(std::istream& is, std::uint8_t* data, std::size_t n, const std::string& field);

std::string read_line(std::istream& is, const std::string& field);

}  // namespace exchanger
