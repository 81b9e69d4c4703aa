#include "exchanger/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "exchanger/hash.hpp"
#include "exchanger/time_encoding.hpp"

namespace exchanger {

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
    if (step < 0 || step >= total_steps) {
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0," +
                            std::to_string(total_steps) + ")");
    }
    if (cfg.schedule == TrainConfig::Schedule::poly) {
        const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
        return cfg.lr0 * std::pow(1.0 - frac, cfg.poly_power);
    }
    const double s = static_cast<double>(step);
    if (s < cfg.step_frac1 * static_cast<double>(total_steps)) return cfg.lr0;
    if (s < cfg.step_frac2 * static_cast<double>(total_steps)) return cfg.lr0 / cfg.step_factor;
    return cfg.lr0 / (cfg.step_factor * cfg.step_factor);
}

void adamw_step(std::vector<float>& param, const std::vector<float>& grad, std::vector<float>& m,
                std::vector<float>& v, std::int64_t t, double lr, double beta1, double beta2,
                double eps, double weight_decay) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
        v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] = static_cast<float>(param[i] - lr * (mhat / (std::sqrt(vhat) + eps)) -
                                      lr * weight_decay * param[i]);
    }
}

void AdamW::step(std::vector<NamedParam>& params, double lr, double weight_decay) {
    ++t_;
    for (auto& p : params) {
        if (!p.value->requires_grad) continue;
        p.value->ensure_grad();
        for (const float g : p.value->grad) {
            if (!std::isfinite(g)) {
                throw NumericalError("adamw: non-finite gradient in " + p.name);
            }
        }
        auto& mom = state_[p.value.get()];
        if (mom.m.empty()) {
            mom.m.assign(p.value->values.size(), 0.f);
            mom.v.assign(p.value->values.size(), 0.f);
        }
        adamw_step(p.value->values, p.value->grad, mom.m, mom.v, t_, lr, beta1_, beta2_, eps_,
                   weight_decay);
    }
}

void zero_param_grads(std::vector<NamedParam>& params) {
    for (auto& p : params) p.value->zero_grad();
}

void scale_param_grads(std::vector<NamedParam>& params, double factor) {
    const float f = static_cast<float>(factor);
    for (auto& p : params) {
        for (auto& g : p.value->grad) g *= f;
    }
}

// ---- model assembly ---------------------------------------------------

Backbone Backbone::init(const ModelConfig& mc, std::uint64_t seed) {
    mc.validate();
    Backbone b;
    b.config = mc;
    b.embed_w = detail::init_param<float>("backbone.embed_w", {mc.channels, mc.encoder.width},
                                          seed, detail::fan_in_std(mc.channels));
    b.embed_b = detail::init_param<float>("backbone.embed_b", {mc.encoder.width}, seed, 0, 0.0, false);
    b.stages = init_exchanger_params<float>(mc.encoder, seed);
    return b;
}

void Backbone::collect_params(std::vector<NamedParam>& out) {
    out.push_back({"backbone.embed_w", embed_w});
    out.push_back({"backbone.embed_b", embed_b});
    for (std::size_t i = 0; i < stages.size(); ++i) {
        stages[i].for_each_param("backbone.stage" + std::to_string(i),
                                 [&](const std::string& name, ValuePtr<float>& t) {
                                     out.push_back({name, t});
                                 });
    }
}

ClassificationModel ClassificationModel::init(const ModelConfig& mc, std::uint64_t seed) {
    ClassificationModel m;
    m.backbone = Backbone::init(mc, seed);
    m.projector = init_projector<float>(mc.encoder.width, mc.proj_hidden, mc.proj_dim, seed);
    m.cosine = init_cosine_classifier<float>(mc.classes, mc.proj_dim, seed);
    return m;
}

std::vector<NamedParam> ClassificationModel::named_params() {
    std::vector<NamedParam> out;
    backbone.collect_params(out);
    projector.for_each_param("head.projector", [&](const std::string& n, ValuePtr<float>& t) {
        out.push_back({n, t});
    });
    cosine.for_each_param("head.cosine", [&](const std::string& n, ValuePtr<float>& t) {
        out.push_back({n, t});
    });
    return out;
}

DenseModel DenseModel::init(const ModelConfig& mc, std::uint64_t seed) {
    DenseModel m;
    m.backbone = Backbone::init(mc, seed);
    m.head = init_dense_head<float>(mc.encoder.width, mc.classes, seed);
    return m;
}

std::vector<NamedParam> DenseModel::named_params() {
    std::vector<NamedParam> out;
    backbone.collect_params(out);
    head.for_each_param("head.dense", [&](const std::string& n, ValuePtr<float>& t) {
        out.push_back({n, t});
    });
    return out;
}

namespace {

ValuePtr<float> pixel_series_input(const PixelSetSample& s, std::int64_t p) {
    std::vector<float> v(static_cast<std::size_t>(s.t_len * s.channels));
    for (std::int64_t t = 0; t < s.t_len; ++t)
        for (std::int64_t c = 0; c < s.channels; ++c)
            v[static_cast<std::size_t>(t * s.channels + c)] = s.value(t, c, p);
    return make_tensor<float>({s.t_len, s.channels}, std::move(v));
}

ValuePtr<float> grid_series_input(const GridSample& g, std::int64_t y, std::int64_t x) {
    std::vector<float> v(static_cast<std::size_t>(g.t_len * g.channels));
    for (std::int64_t t = 0; t < g.t_len; ++t)
        for (std::int64_t c = 0; c < g.channels; ++c)
            v[static_cast<std::size_t>(t * g.channels + c)] = g.value(t, c, y, x);
    return make_tensor<float>({g.t_len, g.channels}, std::move(v));
}

ValuePtr<float> encode_series(Graph& g, Backbone& b, const ValuePtr<float>& series,
                              const ValuePtr<float>& positions,
                              const std::vector<std::uint8_t>& mask) {
    auto tokens = g.add_row(g.matmul(series, b.embed_w), b.embed_b);
    return exchanger_forward(g, b.config.encoder, b.stages, tokens, positions, mask);
}

}  // namespace

ValuePtr<float> classification_logits(Graph& g, ClassificationModel& model,
                                      const PixelSetSample& sample) {
    if (sample.channels != model.backbone.config.channels) {
        throw DataError("classification: sample has " + std::to_string(sample.channels) +
                        " channels, model expects " +
                        std::to_string(model.backbone.config.channels));
    }
    auto positions = sinusoidal_pe<float>(sample.time, model.backbone.config.encoder.width,
                                          model.backbone.config.pe_max_period);
    std::vector<ValuePtr<float>> pooled;
    pooled.reserve(static_cast<std::size_t>(sample.n_pix));
    for (std::int64_t p = 0; p < sample.n_pix; ++p) {
        auto encoded = encode_series(g, model.backbone, pixel_series_input(sample, p), positions,
                                     sample.time.valid);
        pooled.push_back(temporal_pool(g, encoded, sample.time.valid));
    }
    auto features = g.stack_rows(pooled);
    const std::vector<std::uint8_t> pixel_mask(static_cast<std::size_t>(sample.n_pix), 1);
    auto bag = mil_pool(g, features, pixel_mask);
    auto projected = projector_forward(g, model.projector, bag);
    return cosine_logits(g, model.cosine, projected);
}

ValuePtr<float> dense_logits(Graph& g, DenseModel& model, const GridSample& grid) {
    if (grid.channels != model.backbone.config.channels) {
        throw DataError("dense: grid has " + std::to_string(grid.channels) +
                        " channels, model expects " +
                        std::to_string(model.backbone.config.channels));
    }
    auto positions = sinusoidal_pe<float>(grid.time, model.backbone.config.encoder.width,
                                          model.backbone.config.pe_max_period);
    std::vector<ValuePtr<float>> pooled;
    pooled.reserve(static_cast<std::size_t>(grid.height * grid.width));
    for (std::int64_t y = 0; y < grid.height; ++y) {
        for (std::int64_t x = 0; x < grid.width; ++x) {
            auto encoded = encode_series(g, model.backbone, grid_series_input(grid, y, x),
                                         positions, grid.time.valid);
            pooled.push_back(temporal_pool(g, encoded, grid.time.valid));
        }
    }
    auto features = g.stack_rows(pooled);
    return dense_head(g, model.head, features);
}

namespace {

std::int64_t argmax_row(const Tensor& t, std::int64_t row) {
    const std::int64_t k = t.shape.back();
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
        if (t.values[static_cast<std::size_t>(row * k + j)] >
            t.values[static_cast<std::size_t>(row * k + best)])
            best = j;
    }
    return best;
}

}  // namespace

ClassificationEval evaluate_classification(ClassificationModel& model, const Dataset& data) {
    if (data.header.kind != DatasetKind::pixel_set) {
        throw DataError("evaluate_classification: dataset is not pixel-set format");
    }
    ClassificationEval ev;
    ev.confusion = Confusion(model.backbone.config.classes);
    double loss_sum = 0;
    for (const auto& sample : data.pixel_samples) {
        Graph g;
        g.set_grad_enabled(false);
        auto logits = classification_logits(g, model, sample);
        auto loss = g.cross_entropy(logits, sample.label);
        loss_sum += loss->values[0];
        ev.confusion.add(static_cast<int>(sample.label), static_cast<int>(argmax_row(*logits, 0)));
    }
    const auto n = std::max<std::size_t>(1, data.pixel_samples.size());
    ev.mean_loss = loss_sum / static_cast<double>(n);
    ev.metrics = compute_classification_metrics(ev.confusion);
    return ev;
}

DenseEval evaluate_dense(DenseModel& model, const Dataset& data, double focal_gamma) {
    if (data.header.kind != DatasetKind::grid) {
        throw DataError("evaluate_dense: dataset is not grid format");
    }
    DenseEval ev;
    ev.confusion = Confusion(model.backbone.config.classes);
    double loss_sum = 0;
    for (const auto& grid : data.grid_samples) {
        Graph g;
        g.set_grad_enabled(false);
        auto logits = dense_logits(g, model, grid);
        auto loss = g.focal_cross_entropy_rows(logits, grid.labels, focal_gamma, kIgnoreLabel);
        loss_sum += loss->values[0];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(grid.labels.size()); ++i) {
            const std::int32_t truth = grid.labels[static_cast<std::size_t>(i)];
            if (truth == kIgnoreLabel) continue;
            ev.confusion.add(truth, static_cast<int>(argmax_row(*logits, i)));
        }
    }
    const auto n = std::max<std::size_t>(1, data.grid_samples.size());
    ev.mean_loss = loss_sum / static_cast<double>(n);
    ev.miou_pct = compute_miou_pct(ev.confusion);
    return ev;
}

Checkpoint make_checkpoint(const ModelConfig& mc, std::vector<NamedParam>& params) {
    Checkpoint ck;
    ck.config = mc;
    ck.params.reserve(params.size());
    for (const auto& p : params) {
        NamedTensor nt;
        nt.name = p.name;
        nt.tensor.shape = p.value->shape;
        nt.tensor.values = p.value->values;
        ck.params.push_back(std::move(nt));
    }
    return ck;
}

void load_params_from_checkpoint(const Checkpoint& ck, std::vector<NamedParam>& params,
                                 const std::string& prefix) {
    for (auto& p : params) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        const NamedTensor* src = ck.find(p.name);
        if (!src) throw ConfigError("checkpoint: missing parameter " + p.name);
        if (src->tensor.shape != p.value->shape) {
            throw ConfigError("checkpoint: parameter " + p.name + " has shape " +
                              shape_str(src->tensor.shape) + ", model expects " +
                              shape_str(p.value->shape));
        }
        p.value->values = src->tensor.values;
    }
}

std::string fingerprint_params(std::vector<NamedParam>& params, const std::string& prefix) {
    std::string buf;
    for (const auto& p : params) {
        if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
        buf.append(p.name);
        buf.push_back('\0');
        const char* bytes = reinterpret_cast<const char*>(p.value->values.data());
        buf.append(bytes, p.value->values.size() * sizeof(float));
    }
    return sha1_hex(buf);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

void check_dataset_schema(const Dataset& ds, const ModelConfig& mc, DatasetKind expected,
                          const char* what) {
    if (ds.header.kind != expected) {
        throw DataError(std::string(what) + ": dataset kind does not match the training mode");
    }
    if (ds.header.channels != mc.channels) {
        throw ConfigError(std::string(what) + ": dataset has " +
                          std::to_string(ds.header.channels) + " channels, model config has " +
                          std::to_string(mc.channels));
    }
    if (ds.header.n_classes != mc.classes) {
        throw ConfigError(std::string(what) + ": dataset has " +
                          std::to_string(ds.header.n_classes) + " classes, model config has " +
                          std::to_string(mc.classes));
    }
}

}  // namespace

PretrainOutput run_pretrain(const Dataset& train, const Dataset& val, const ModelConfig& mc,
                            const TrainConfig& tc) {
    mc.validate();
    tc.validate();
    check_dataset_schema(train, mc, DatasetKind::pixel_set, "pretrain train set");
    check_dataset_schema(val, mc, DatasetKind::pixel_set, "pretrain val set");
    if (train.pixel_samples.empty()) throw DataError("pretrain: empty training set");

    ClassificationModel model = ClassificationModel::init(mc, tc.seed);
    auto params = model.named_params();
    AdamW opt(tc.beta1, tc.beta2, tc.adam_eps);

    const std::size_t n = train.pixel_samples.size();
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((n + tc.batch_size - 1) / tc.batch_size);
    const std::int64_t total_steps = steps_per_epoch * tc.epochs;

    PretrainOutput out;
    out.metrics.initial_train_loss = evaluate_classification(model, train).mean_loss;
    Checkpoint last_good = make_checkpoint(mc, params);
    std::int64_t step_idx = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const auto order = shuffled_indices(n, mix_seed(tc.seed, 0xE70C0000ULL + epoch));
        double loss_sum = 0;
        std::size_t pos = 0;
        bool diverged = false;
        while (pos < n) {
            const std::size_t batch_end = std::min(n, pos + static_cast<std::size_t>(tc.batch_size));
            zero_param_grads(params);
            for (std::size_t bi = pos; bi < batch_end; ++bi) {
                const std::size_t idx = order[bi];
                const PixelSetSample* sample = &train.pixel_samples[idx];
                PixelSetSample augmented;
                if (tc.dropout_high > 0) {
                    augmented = temporal_dropout(
                        *sample, tc.dropout_low, tc.dropout_high,
                        mix_seed(tc.seed, 0xD0000000ULL + static_cast<std::uint64_t>(epoch) * n + idx));
                    sample = &augmented;
                }
                Graph g;
                auto logits = classification_logits(g, model, *sample);
                auto loss = g.cross_entropy(logits, sample->label);
                if (!std::isfinite(loss->values[0])) {
                    diverged = true;
                    break;
                }
                loss_sum += loss->values[0];
                g.backward(loss);
            }
            if (diverged) break;
            scale_param_grads(params, 1.0 / static_cast<double>(batch_end - pos));
            try {
                opt.step(params, lr_at(step_idx, total_steps, tc), tc.weight_decay);
            } catch (const NumericalError&) {
                diverged = true;
                break;
            }
            ++step_idx;
            pos = batch_end;
        }
        if (diverged) {
            out.metrics.aborted = true;
            out.metrics.note = "divergence at epoch " + std::to_string(epoch) +
                               "; returning last good checkpoint";
            out.checkpoint = std::move(last_good);
            return out;
        }

        auto ev = evaluate_classification(model, val);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.val_loss = ev.mean_loss;
        rec.precision_pct = ev.metrics.precision_pct;
        rec.recall_pct = ev.metrics.recall_pct;
        rec.f1_pct = ev.metrics.f1_pct;
        rec.seconds = seconds_since(t0);
        out.metrics.epochs.push_back(rec);
        last_good = make_checkpoint(mc, params);
    }
    out.checkpoint = std::move(last_good);
    return out;
}

FinetuneOutput run_finetune(const Dataset& train_grids, const Dataset& val_grids,
                            const ModelConfig& mc, const TrainConfig& tc,
                            const Checkpoint* init_backbone) {
    mc.validate();
    tc.validate();
    check_dataset_schema(train_grids, mc, DatasetKind::grid, "finetune train set");
    check_dataset_schema(val_grids, mc, DatasetKind::grid, "finetune val set");
    if (train_grids.grid_samples.empty()) throw DataError("finetune: empty training set");

    DenseModel model = DenseModel::init(mc, tc.seed);
    auto params = model.named_params();
    if (init_backbone) {
        if (init_backbone->config.encoder.width != mc.encoder.width ||
            init_backbone->config.encoder.stages != mc.encoder.stages ||
            init_backbone->config.encoder.clusters != mc.encoder.clusters ||
            init_backbone->config.encoder.heads != mc.encoder.heads ||
            init_backbone->config.channels != mc.channels) {
            throw ConfigError("finetune: checkpoint encoder configuration does not match");
        }
        load_params_from_checkpoint(*init_backbone, params, "backbone.");
    }
    AdamW opt(tc.beta1, tc.beta2, tc.adam_eps);

    const std::size_t n = train_grids.grid_samples.size();
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((n + tc.batch_size - 1) / tc.batch_size);
    const std::int64_t total_steps = steps_per_epoch * tc.epochs;

    FinetuneOutput out;
    Checkpoint last_good = make_checkpoint(mc, params);
    std::int64_t step_idx = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const auto order = shuffled_indices(n, mix_seed(tc.seed, 0xF1400000ULL + epoch));
        double loss_sum = 0;
        std::size_t pos = 0;
        bool diverged = false;
        while (pos < n) {
            const std::size_t batch_end = std::min(n, pos + static_cast<std::size_t>(tc.batch_size));
            zero_param_grads(params);
            for (std::size_t bi = pos; bi < batch_end; ++bi) {
                const std::size_t idx = order[bi];
                const GridSample* grid = &train_grids.grid_samples[idx];
                GridSample augmented;
                if (tc.dropout_high > 0) {
                    augmented = temporal_dropout_grid(
                        *grid, tc.dropout_low, tc.dropout_high,
                        mix_seed(tc.seed, 0xDA000000ULL + static_cast<std::uint64_t>(epoch) * n + idx));
                    grid = &augmented;
                }
                Graph g;
                auto logits = dense_logits(g, model, *grid);
                auto loss = g.focal_cross_entropy_rows(logits, grid->labels, tc.focal_gamma,
                                                       kIgnoreLabel);
                if (!std::isfinite(loss->values[0])) {
                    diverged = true;
                    break;
                }
                loss_sum += loss->values[0];
                g.backward(loss);
            }
            if (diverged) break;
            scale_param_grads(params, 1.0 / static_cast<double>(batch_end - pos));
            try {
                opt.step(params, lr_at(step_idx, total_steps, tc), tc.weight_decay);
            } catch (const NumericalError&) {
                diverged = true;
                break;
            }
            ++step_idx;
            pos = batch_end;
        }
        if (diverged) {
            out.metrics.aborted = true;
            out.metrics.note = "divergence at epoch " + std::to_string(epoch) +
                               "; returning last good checkpoint";
            out.checkpoint = std::move(last_good);
            return out;
        }

        auto ev = evaluate_dense(model, val_grids, tc.focal_gamma);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.val_loss = ev.mean_loss;
        rec.miou_pct = ev.miou_pct;
        rec.seconds = seconds_since(t0);
        out.metrics.epochs.push_back(rec);
        last_good = make_checkpoint(mc, params);
    }
    out.checkpoint = std::move(last_good);
    return out;
}

int epochs_to_reach_miou(const RunMetrics& metrics, double target_pct) {
    for (std::size_t i = 0; i < metrics.epochs.size(); ++i) {
        if (metrics.epochs[i].miou_pct >= target_pct) return static_cast<int>(i) + 1;
    }
    return -1;
}

std::vector<Tensor> export_stage_features(ClassificationModel& model,
                                          const PixelSetSample& sample) {
    const auto& mc = model.backbone.config;
    auto positions = sinusoidal_pe<float>(sample.time, mc.encoder.width, mc.pe_max_period);
    const std::int64_t t_len = sample.t_len;
    const std::int64_t d = mc.encoder.width;
    std::vector<Tensor> stage_means(model.backbone.stages.size());
    for (auto& t : stage_means) {
        t.shape = {t_len, d};
        t.values.assign(static_cast<std::size_t>(t_len * d), 0.f);
    }
    Graph g;
    g.set_grad_enabled(false);
    for (std::int64_t p = 0; p < sample.n_pix; ++p) {
        auto tokens = g.add_row(g.matmul(pixel_series_input(sample, p), model.backbone.embed_w),
                                model.backbone.embed_b);
        for (std::size_t s = 0; s < model.backbone.stages.size(); ++s) {
            tokens = stage_forward(g, mc.encoder, model.backbone.stages[s], tokens, positions,
                                   sample.time.valid);
            for (std::size_t i = 0; i < tokens->values.size(); ++i)
                stage_means[s].values[i] += tokens->values[i] / static_cast<float>(sample.n_pix);
        }
    }
    return stage_means;
}

}  // namespace exchanger
