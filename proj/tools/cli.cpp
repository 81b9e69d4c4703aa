#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <exchanger/bench.hpp>
#include <exchanger/checkpoint.hpp>
#include <exchanger/data.hpp>
#include <exchanger/errors.hpp>
#include <exchanger/hash.hpp>
#include <exchanger/serialize.hpp>
#include <exchanger/train.hpp>

namespace exchanger {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool force = false;
    int threads = 0;  // 0: resolve from env or default to 1
};

int resolve_threads(const CommonArgs& args) {
    int threads = args.threads;
    if (threads <= 0) {
        if (const char* env = std::getenv("EXCHANGER_THREADS")) {
            threads = std::atoi(env);
        }
    }
    if (threads <= 0) threads = 1;
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0) threads = std::min(threads, hw);
    return threads;
}

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return j;
}

// Output directory contract: created if absent, reused only when empty
// or when --force is given.
void prepare_out_dir(const CommonArgs& args) {
    if (args.out_dir.empty()) throw ConfigError("--out is required for this command");
    const fs::path dir(args.out_dir);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError("--out exists and is not a directory");
        if (!fs::is_empty(dir) && !args.force) {
            throw ConfigError("output directory " + args.out_dir +
                              " is not empty; pass --force to overwrite");
        }
    } else {
        fs::create_directories(dir);
    }
}

std::string out_file(const CommonArgs& args, const std::string& name) {
    return (fs::path(args.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path);
    os << text;
}

void write_manifest(const CommonArgs& args, const std::string& command, const json& extra) {
    json m;
    m["command"] = command;
    m["config_path"] = args.config_path;
    m["config_sha1"] = sha1_file(args.config_path);
    m["seed"] = args.seed;
    m["threads"] = resolve_threads(args);
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_text(out_file(args, "manifest.json"), m.dump(2) + "\n");
}

// ---- config json -> structs --------------------------------------------

SynthConfig synth_from_json(const json& j) {
    SynthConfig cfg;
    cfg.classes = j.value("classes", cfg.classes);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.t_min = j.value("t_min", cfg.t_min);
    cfg.t_max = j.value("t_max", cfg.t_max);
    cfg.n_pix = j.value("n_pix", cfg.n_pix);
    cfg.season_days = j.value("season_days", cfg.season_days);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.pixel_offset_sigma = j.value("pixel_offset_sigma", cfg.pixel_offset_sigma);
    cfg.cloud_dropout = j.value("cloud_dropout", cfg.cloud_dropout);
    cfg.grid_height = j.value("grid_height", cfg.grid_height);
    cfg.grid_width = j.value("grid_width", cfg.grid_width);
    cfg.parcels_min = j.value("parcels_min", cfg.parcels_min);
    cfg.parcels_max = j.value("parcels_max", cfg.parcels_max);
    return cfg;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig tc;
    tc.epochs = j.value("epochs", tc.epochs);
    tc.batch_size = j.value("batch_size", tc.batch_size);
    tc.lr0 = j.value("lr0", tc.lr0);
    tc.weight_decay = j.value("weight_decay", tc.weight_decay);
    const std::string schedule = j.value("schedule", std::string("step"));
    if (schedule == "step") {
        tc.schedule = TrainConfig::Schedule::step;
    } else if (schedule == "poly") {
        tc.schedule = TrainConfig::Schedule::poly;
    } else {
        throw ConfigError("train config: unknown schedule '" + schedule + "'");
    }
    tc.step_frac1 = j.value("step_frac1", tc.step_frac1);
    tc.step_frac2 = j.value("step_frac2", tc.step_frac2);
    tc.step_factor = j.value("step_factor", tc.step_factor);
    tc.poly_power = j.value("poly_power", tc.poly_power);
    tc.dropout_low = j.value("dropout_low", tc.dropout_low);
    tc.dropout_high = j.value("dropout_high", tc.dropout_high);
    tc.focal_gamma = j.value("focal_gamma", tc.focal_gamma);
    tc.seed = j.value("seed", tc.seed);
    return tc;
}

ModelConfig model_from_json_node(const json& j) { return model_config_from_json(j.dump()); }

// ---- metrics output ------------------------------------------------------

// Long-format CSV: epoch, split, metric, value.
std::string metrics_csv(const RunMetrics& rm, bool dense) {
    std::ostringstream os;
    os << "epoch,split,metric,value\n";
    os.precision(8);
    for (const auto& e : rm.epochs) {
        os << e.epoch << ",train,loss," << e.train_loss << '\n';
        os << e.epoch << ",val,loss," << e.val_loss << '\n';
        if (dense) {
            os << e.epoch << ",val,miou," << e.miou_pct << '\n';
        } else {
            os << e.epoch << ",val,precision," << e.precision_pct << '\n';
            os << e.epoch << ",val,recall," << e.recall_pct << '\n';
            os << e.epoch << ",val,f1," << e.f1_pct << '\n';
        }
        os << e.epoch << ",train,seconds," << e.seconds << '\n';
    }
    return os.str();
}

json metrics_summary(const RunMetrics& rm, bool dense) {
    json j;
    j["epochs"] = rm.epochs.size();
    j["aborted"] = rm.aborted;
    if (!rm.note.empty()) j["note"] = rm.note;
    j["initial_train_loss"] = rm.initial_train_loss;
    if (!rm.epochs.empty()) {
        const auto& last = rm.epochs.back();
        j["final_train_loss"] = last.train_loss;
        j["final_val_loss"] = last.val_loss;
        if (dense) {
            j["final_miou"] = last.miou_pct;
            double best = 0;
            for (const auto& e : rm.epochs) best = std::max(best, e.miou_pct);
            j["best_miou"] = best;
        } else {
            j["final_precision"] = last.precision_pct;
            j["final_recall"] = last.recall_pct;
            j["final_f1"] = last.f1_pct;
            double best = 0;
            for (const auto& e : rm.epochs) best = std::max(best, e.f1_pct);
            j["best_f1"] = best;
        }
    }
    return j;
}

// ---- subcommands ----------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    if (!cfg_json.contains("synth")) throw ConfigError("gen-data config: missing 'synth' section");
    SynthConfig synth = synth_from_json(cfg_json.at("synth"));
    const int pixel_train = cfg_json.value("pixel_train", 0);
    const int pixel_val = cfg_json.value("pixel_val", 0);
    const int grid_train = cfg_json.value("grid_train", 0);
    const int grid_val = cfg_json.value("grid_val", 0);
    prepare_out_dir(args);
    const int threads = resolve_threads(args);
    const std::string config_sha1 = sha1_file(args.config_path);

    json outputs = json::object();
    auto emit = [&](const std::string& name, Dataset& ds) {
        ds.header.config_sha1 = config_sha1;
        const auto path = out_file(args, name);
        write_dataset(path, ds);
        outputs[name] = sha1_file(path);
    };
    {
        synth.grid_count = grid_train;
        auto res = generate_synthetic(synth, pixel_train, mix_seed(args.seed, 1), threads);
        if (pixel_train > 0) emit("pixel_train.sits", res.pixel);
        if (grid_train > 0) emit("grid_train.sits", res.grid);
    }
    {
        synth.grid_count = grid_val;
        auto res = generate_synthetic(synth, pixel_val, mix_seed(args.seed, 2), threads);
        if (pixel_val > 0) emit("pixel_val.sits", res.pixel);
        if (grid_val > 0) emit("grid_val.sits", res.grid);
    }
    write_manifest(args, "gen-data", json{{"outputs", outputs}});
    std::cout << "gen-data: wrote " << outputs.size() << " dataset files to " << args.out_dir
              << "\n";
    return 0;
}

struct LoadedData {
    Dataset train;
    Dataset val;
    std::string train_sha1, val_sha1;
};

LoadedData load_train_val(const json& cfg_json) {
    if (!cfg_json.contains("data")) throw ConfigError("config: missing 'data' section");
    const auto& data = cfg_json.at("data");
    LoadedData out;
    const std::string train_path = data.value("train", "");
    const std::string val_path = data.value("val", "");
    if (train_path.empty() || val_path.empty()) {
        throw ConfigError("config: data.train and data.val paths are required");
    }
    out.train = read_dataset(train_path);
    out.val = read_dataset(val_path);
    out.train_sha1 = sha1_file(train_path);
    out.val_sha1 = sha1_file(val_path);
    return out;
}

ModelConfig model_from_config(const json& cfg_json, const Dataset& data) {
    ModelConfig mc;
    if (cfg_json.contains("model")) mc = model_from_json_node(cfg_json.at("model"));
    // schema fields follow the dataset unless pinned explicitly
    if (!cfg_json.contains("model") || !cfg_json.at("model").contains("channels")) {
        mc.channels = data.header.channels;
    }
    if (!cfg_json.contains("model") || !cfg_json.at("model").contains("classes")) {
        mc.classes = data.header.n_classes;
    }
    return mc;
}

int cmd_pretrain(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    auto data = load_train_val(cfg_json);
    const ModelConfig mc = model_from_config(cfg_json, data.train);
    TrainConfig tc = train_from_json(cfg_json.value("train", json::object()));
    if (args.seed_given) tc.seed = args.seed;
    tc.mode = TrainConfig::Mode::pretrain;
    prepare_out_dir(args);

    auto out = run_pretrain(data.train, data.val, mc, tc);
    out.checkpoint.config_sha1 = sha1_file(args.config_path);
    out.checkpoint.dataset_sha1 = data.train_sha1;
    const auto ckpt_path = out_file(args, "checkpoint.ckpt");
    save_checkpoint(ckpt_path, out.checkpoint);
    write_text(out_file(args, "metrics.csv"), metrics_csv(out.metrics, false));
    json summary = metrics_summary(out.metrics, false);
    summary["config_sha1"] = out.checkpoint.config_sha1;
    write_text(out_file(args, "metrics.json"), summary.dump(2) + "\n");
    write_manifest(args, "pretrain",
                   json{{"dataset_sha1", {{"train", data.train_sha1}, {"val", data.val_sha1}}},
                        {"outputs", {"checkpoint.ckpt", "metrics.csv", "metrics.json"}},
                        {"checkpoint_sha1", sha1_file(ckpt_path)}});
    if (out.metrics.aborted) {
        std::cerr << "pretrain aborted: " << out.metrics.note << "\n";
        return 3;
    }
    std::cout << "pretrain: final f1 " << summary.value("final_f1", 0.0) << "% after "
              << out.metrics.epochs.size() << " epochs\n";
    return 0;
}

int cmd_finetune(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    auto data = load_train_val(cfg_json);
    const ModelConfig mc = model_from_config(cfg_json, data.train);
    TrainConfig tc = train_from_json(cfg_json.value("train", json::object()));
    if (args.seed_given) tc.seed = args.seed;

    const std::string init = cfg_json.value("init", "scratch");
    Checkpoint backbone;
    const Checkpoint* backbone_ptr = nullptr;
    if (init == "pretrained") {
        const std::string ckpt = cfg_json.value("init_checkpoint", "");
        if (ckpt.empty()) throw ConfigError("finetune config: init_checkpoint required");
        backbone = load_checkpoint(ckpt);
        backbone_ptr = &backbone;
        tc.mode = TrainConfig::Mode::finetune_pretrained;
    } else if (init == "scratch") {
        tc.mode = TrainConfig::Mode::finetune_scratch;
    } else {
        throw ConfigError("finetune config: init must be 'scratch' or 'pretrained'");
    }
    prepare_out_dir(args);

    auto out = run_finetune(data.train, data.val, mc, tc, backbone_ptr);
    out.checkpoint.config_sha1 = sha1_file(args.config_path);
    out.checkpoint.dataset_sha1 = data.train_sha1;
    const auto ckpt_path = out_file(args, "checkpoint.ckpt");
    save_checkpoint(ckpt_path, out.checkpoint);
    write_text(out_file(args, "metrics.csv"), metrics_csv(out.metrics, true));
    json summary = metrics_summary(out.metrics, true);
    summary["config_sha1"] = out.checkpoint.config_sha1;
    summary["init"] = init;
    write_text(out_file(args, "metrics.json"), summary.dump(2) + "\n");
    write_manifest(args, "finetune",
                   json{{"dataset_sha1", {{"train", data.train_sha1}, {"val", data.val_sha1}}},
                        {"outputs", {"checkpoint.ckpt", "metrics.csv", "metrics.json"}},
                        {"init", init}});
    if (out.metrics.aborted) {
        std::cerr << "finetune aborted: " << out.metrics.note << "\n";
        return 3;
    }
    std::cout << "finetune(" << init << "): final miou " << summary.value("final_miou", 0.0)
              << "% after " << out.metrics.epochs.size() << " epochs\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    const std::string ckpt_path = cfg_json.value("checkpoint", "");
    const std::string data_path = cfg_json.value("data", "");
    if (ckpt_path.empty() || data_path.empty()) {
        throw ConfigError("eval config: checkpoint and data paths are required");
    }
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset data = read_dataset(data_path);

    // a checkpoint only evaluates against data matching its schema
    if (data.header.channels != ck.config.channels ||
        data.header.n_classes != ck.config.classes) {
        throw ConfigError("eval: checkpoint schema (" + std::to_string(ck.config.channels) +
                          " channels, " + std::to_string(ck.config.classes) +
                          " classes) does not match dataset (" +
                          std::to_string(data.header.channels) + ", " +
                          std::to_string(data.header.n_classes) + ")");
    }
    if (cfg_json.contains("expect_config_sha1") &&
        cfg_json.at("expect_config_sha1").get<std::string>() != ck.config_sha1) {
        throw ConfigError("eval: checkpoint was produced by config " + ck.config_sha1 +
                          ", expected " + cfg_json.at("expect_config_sha1").get<std::string>());
    }
    prepare_out_dir(args);

    json result;
    result["config_sha1"] = sha1_file(args.config_path);
    result["checkpoint"] = ckpt_path;
    result["checkpoint_config_sha1"] = ck.config_sha1;
    result["data"] = data_path;
    if (data.header.kind == DatasetKind::pixel_set) {
        ClassificationModel model = ClassificationModel::init(ck.config, 0);
        auto params = model.named_params();
        load_params_from_checkpoint(ck, params, "");
        const auto ev = evaluate_classification(model, data);
        result["loss"] = ev.mean_loss;
        result["precision"] = ev.metrics.precision_pct;
        result["recall"] = ev.metrics.recall_pct;
        result["f1"] = ev.metrics.f1_pct;
        std::cout << "eval: f1 " << ev.metrics.f1_pct << "%\n";
    } else {
        DenseModel model = DenseModel::init(ck.config, 0);
        auto params = model.named_params();
        load_params_from_checkpoint(ck, params, "");
        const double gamma = cfg_json.value("focal_gamma", 2.0);
        const auto ev = evaluate_dense(model, data, gamma);
        result["loss"] = ev.mean_loss;
        result["miou"] = ev.miou_pct;
        std::cout << "eval: miou " << ev.miou_pct << "%\n";
    }
    write_text(out_file(args, "eval.json"), result.dump(2) + "\n");
    write_manifest(args, "eval",
                   json{{"dataset_sha1", {{"eval", sha1_file(data_path)}}},
                        {"checkpoint_sha1", sha1_file(ckpt_path)},
                        {"outputs", {"eval.json"}}});
    return 0;
}

int cmd_bench(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    ExchangerConfig cfg;
    if (cfg_json.contains("encoder")) {
        const auto mc = model_from_json_node(json{{"encoder", cfg_json.at("encoder")}});
        cfg = mc.encoder;
    }
    std::vector<std::int64_t> t_list;
    if (cfg_json.contains("t_list")) {
        for (const auto& t : cfg_json.at("t_list")) t_list.push_back(t.get<std::int64_t>());
    } else {
        for (std::int64_t t = 64; t <= 4096; t *= 2) t_list.push_back(t);
    }
    const int repeats = cfg_json.value("repeats", 5);
    std::vector<std::string> encoders =
        cfg_json.value("encoders", std::vector<std::string>{"exchanger", "self_attention"});
    prepare_out_dir(args);

    const auto res = run_scaling(encoders, t_list, cfg, repeats, args.seed);
    write_text(out_file(args, "bench.csv"), bench_records_csv(res.records));
    json slopes;
    for (const auto& [name, slope] : res.slopes) slopes[name] = slope;
    json summary;
    summary["config_sha1"] = sha1_file(args.config_path);
    summary["slopes"] = slopes;
    summary["t_list"] = t_list;
    summary["repeats"] = repeats;
    summary["clusters"] = cfg.clusters;
    summary["width"] = cfg.width;
    write_text(out_file(args, "slopes.json"), summary.dump(2) + "\n");
    write_manifest(args, "bench", json{{"outputs", {"bench.csv", "slopes.json"}}});
    std::cout << "bench slopes:";
    for (const auto& [name, slope] : res.slopes) std::cout << ' ' << name << '=' << slope;
    std::cout << "\n";
    return 0;
}

int cmd_export_features(const CommonArgs& args) {
    const json cfg_json = load_config(args.config_path);
    const std::string ckpt_path = cfg_json.value("checkpoint", "");
    const std::string data_path = cfg_json.value("data", "");
    if (ckpt_path.empty() || data_path.empty()) {
        throw ConfigError("export-features config: checkpoint and data paths are required");
    }
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset data = read_dataset(data_path);
    if (data.header.kind != DatasetKind::pixel_set) {
        throw DataError("export-features: expects a pixel-set dataset");
    }
    if (data.header.channels != ck.config.channels) {
        throw ConfigError("export-features: dataset channels do not match the checkpoint");
    }
    const std::size_t max_samples = std::min<std::size_t>(
        data.pixel_samples.size(), cfg_json.value("max_samples", std::size_t{1}));
    prepare_out_dir(args);

    ClassificationModel model = ClassificationModel::init(ck.config, 0);
    auto params = model.named_params();
    load_params_from_checkpoint(ck, params, "");

    json blocks = json::array();
    for (std::size_t i = 0; i < max_samples; ++i) {
        const auto& sample = data.pixel_samples[i];
        const auto features = export_stage_features(model, sample);
        for (std::size_t s = 0; s < features.size(); ++s) {
            const std::string name =
                "sample" + std::to_string(i) + "_stage" + std::to_string(s) + ".tensor";
            std::ofstream os(out_file(args, name), std::ios::binary);
            write_tensor_block(os, features[s].shape, features[s].values);
            json entry;
            entry["file"] = name;
            entry["sample"] = i;
            entry["stage"] = s;
            entry["label"] = sample.label;
            entry["shape"] = features[s].shape;
            blocks.push_back(entry);
        }
    }
    json index;
    index["config_sha1"] = sha1_file(args.config_path);
    index["checkpoint_config_sha1"] = ck.config_sha1;
    index["blocks"] = blocks;
    write_text(out_file(args, "features_index.json"), index.dump(2) + "\n");
    write_manifest(args, "export-features",
                   json{{"dataset_sha1", {{"data", sha1_file(data_path)}}},
                        {"checkpoint_sha1", sha1_file(ckpt_path)},
                        {"samples", max_samples}});
    std::cout << "export-features: wrote " << blocks.size() << " tensor blocks\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Exchanger: temporal encoding of irregular satellite image time series"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string command;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON config file")->required();
        auto* seed_opt = sub->add_option("--seed", args.seed, "seed override");
        sub->callback([&args, &command, seed_opt, sub]() {
            command = sub->get_name();
            args.seed_given = seed_opt->count() > 0;
        });
        sub->add_option("--out", args.out_dir, "output directory")->required();
        sub->add_flag("--force", args.force, "allow writing into a non-empty output directory");
        sub->add_option("--threads", args.threads,
                        "worker threads (default: EXCHANGER_THREADS or 1)");
    };
    add_common(app.add_subcommand("gen-data", "generate synthetic datasets"));
    add_common(app.add_subcommand("pretrain", "pixel-set classification pretraining"));
    add_common(app.add_subcommand("finetune", "dense per-pixel finetuning"));
    add_common(app.add_subcommand("eval", "evaluate a checkpoint on a dataset"));
    add_common(app.add_subcommand("bench", "wall-clock scaling benchmark"));
    add_common(app.add_subcommand("export-features", "dump per-stage temporal features"));

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (command == "gen-data") return cmd_gen_data(args);
        if (command == "pretrain") return cmd_pretrain(args);
        if (command == "finetune") return cmd_finetune(args);
        if (command == "eval") return cmd_eval(args);
        if (command == "bench") return cmd_bench(args);
        if (command == "export-features") return cmd_export_features(args);
        std::cerr << "unknown command\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const RangeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace exchanger
