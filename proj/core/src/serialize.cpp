#include "exchanger/serialize.hpp"

#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "exchanger/errors.hpp"

namespace exchanger {

namespace {

// All supported targets are little-endian; byte order is still made
// explicit so files are portable by construction.
void put_le32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_le32(std::istream& is, const std::string& field) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw FormatError("truncated field: " + field);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le32(os, v); }

void write_i32(std::ostream& os, std::int32_t v) { put_le32(os, static_cast<std::uint32_t>(v)); }

void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le32(os, bits);
}

void write_bytes(std::ostream& os, const std::uint8_t* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

std::uint32_t read_u32(std::istream& is, const std::string& field) { return get_le32(is, field); }

std::int32_t read_i32(std::istream& is, const std::string& field) {
    return static_cast<std::int32_t>(get_le32(is, field));
}

float read_f32(std::istream& is, const std::string& field) {
    const std::uint32_t bits = get_le32(is, field);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void read_bytes(std::istream& is, std::uint8_t* data, std::size_t n, const std::string& field) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("truncated field: " + field);
}

std::string read_line(std::istream& is, const std::string& field) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("missing line: " + field);
    return line;
}

void write_tensor_block(std::ostream& os, const Shape& shape, const std::vector<float>& values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("tensor block: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
    }
    os << "shape: ";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << '\n';
    for (const float v : values) write_f32(os, v);
}

void read_tensor_block(std::istream& is, Shape& shape, std::vector<float>& values) {
    const std::string line = read_line(is, "tensor shape header");
    const std::string prefix = "shape: ";
    if (line.rfind(prefix, 0) != 0) throw FormatError("tensor block: bad shape header '" + line + "'");
    shape.clear();
    std::stringstream ss(line.substr(prefix.size()));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            const long long d = std::stoll(tok);
            if (d <= 0) throw FormatError("tensor block: non-positive dimension " + tok);
            shape.push_back(d);
        } catch (const std::invalid_argument&) {
            throw FormatError("tensor block: bad dimension '" + tok + "'");
        } catch (const std::out_of_range&) {
            throw FormatError("tensor block: dimension out of range '" + tok + "'");
        }
    }
    if (shape.empty()) throw FormatError("tensor block: empty shape header");
    const std::int64_t n = shape_numel(shape);
    if (n > (std::int64_t(1) << 33)) throw FormatError("tensor block: implausible element count");
    values.resize(static_cast<std::size_t>(n));
    for (auto& v : values) v = read_f32(is, "tensor payload");
}

}  // namespace exchanger
