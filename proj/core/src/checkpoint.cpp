#include "exchanger/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "exchanger/errors.hpp"
#include "exchanger/serialize.hpp"

namespace exchanger {

using nlohmann::json;

namespace {

json encoder_to_json(const ExchangerConfig& ec) {
    json j;
    j["width"] = ec.width;
    j["clusters"] = ec.clusters;
    j["heads"] = ec.heads;
    j["stages"] = ec.stages;
    j["ffn_expansion"] = ec.ffn_expansion;
    j["token_mlp_hidden"] = ec.token_mlp_hidden;
    j["position_queries"] = ec.position_queries;
    return j;
}

ExchangerConfig encoder_from_json(const json& j) {
    ExchangerConfig ec;
    ec.width = j.value("width", ec.width);
    ec.clusters = j.value("clusters", ec.clusters);
    ec.heads = j.value("heads", ec.heads);
    ec.stages = j.value("stages", ec.stages);
    ec.ffn_expansion = j.value("ffn_expansion", ec.ffn_expansion);
    ec.token_mlp_hidden = j.value("token_mlp_hidden", ec.token_mlp_hidden);
    ec.position_queries = j.value("position_queries", ec.position_queries);
    return ec;
}

json model_to_json(const ModelConfig& mc) {
    json j;
    j["encoder"] = encoder_to_json(mc.encoder);
    j["channels"] = mc.channels;
    j["classes"] = mc.classes;
    j["proj_hidden"] = mc.proj_hidden;
    j["proj_dim"] = mc.proj_dim;
    j["pe_max_period"] = mc.pe_max_period;
    return j;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig mc;
    if (j.contains("encoder")) mc.encoder = encoder_from_json(j.at("encoder"));
    mc.channels = j.value("channels", mc.channels);
    mc.classes = j.value("classes", mc.classes);
    mc.proj_hidden = j.value("proj_hidden", mc.proj_hidden);
    mc.proj_dim = j.value("proj_dim", mc.proj_dim);
    mc.pe_max_period = j.value("pe_max_period", mc.pe_max_period);
    return mc;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& mc) { return model_to_json(mc).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return model_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    json manifest;
    manifest["format"] = "exchanger-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = model_to_json(ck.config);
    manifest["config_sha1"] = ck.config_sha1;
    manifest["dataset_sha1"] = ck.dataset_sha1;
    json names = json::array();
    for (const auto& p : ck.params) names.push_back(p.name);
    manifest["params"] = names;
    os << manifest.dump() << '\n';
    for (const auto& p : ck.params) write_tensor_block(os, p.tensor.shape, p.tensor.values);
    if (!os) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    const std::string line = read_line(is, "checkpoint manifest");
    json manifest;
    try {
        manifest = json::parse(line);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint: unparseable manifest: ") + e.what());
    }
    Checkpoint ck;
    try {
        if (manifest.at("format").get<std::string>() != "exchanger-checkpoint") {
            throw FormatError("checkpoint: wrong format field");
        }
        if (manifest.at("version").get<int>() != 1) {
            throw FormatError("checkpoint: unsupported version");
        }
        ck.config = model_from_json(manifest.at("config"));
        ck.config_sha1 = manifest.value("config_sha1", "");
        ck.dataset_sha1 = manifest.value("dataset_sha1", "");
        for (const auto& name : manifest.at("params")) {
            NamedTensor nt;
            nt.name = name.get<std::string>();
            read_tensor_block(is, nt.tensor.shape, nt.tensor.values);
            ck.params.push_back(std::move(nt));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad manifest field: ") + e.what());
    }
    return ck;
}

}  // namespace exchanger
