#pragma once

#include <string>
#include <vector>

#include "exchanger/model.hpp"
#include "exchanger/tensor.hpp"

namespace exchanger {

// Everything needed to rebuild a model: encoder configuration, data
// schema, and the projector/classifier sizes.
struct ModelConfig {
    ExchangerConfig encoder;
    int channels = 3;
    int classes = 5;
    std::int64_t proj_hidden = 256;
    std::int64_t proj_dim = 128;
    double pe_max_period = 10000.0;

    void validate() const {
        encoder.validate();
        if (channels < 1 || classes < 1) throw ConfigError("model config: channels/classes must be >= 1");
        if (proj_hidden < 1 || proj_dim < 1) throw ConfigError("model config: projector sizes must be >= 1");
        if (!(pe_max_period > 0)) throw ConfigError("model config: pe_max_period must be positive");
    }
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Checkpoint file: one JSON manifest line (format, model config,
// producing config hash, ordered parameter names) followed by one
// tensor block per parameter. Backbone parameters are namespaced
// "backbone.", heads "head.", so a finetune run can load the backbone
// alone. Round-trips are bit-exact.
struct Checkpoint {
    ModelConfig config;
    std::string config_sha1;
    std::string dataset_sha1;
    std::vector<NamedTensor> params;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& mc);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace exchanger
