#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "exchanger/checkpoint.hpp"
#include "exchanger/data.hpp"
#include "exchanger/graph.hpp"
#include "exchanger/heads.hpp"
#include "exchanger/metrics.hpp"
#include "exchanger/model.hpp"

namespace exchanger {

struct TrainConfig {
    enum class Schedule { step, poly };
    enum class Mode { pretrain, finetune_scratch, finetune_pretrained };

    int epochs = 50;
    int batch_size = 32;
    double lr0 = 2e-4;
    double weight_decay = 0.005;
    Schedule schedule = Schedule::step;
    double step_frac1 = 0.7;
    double step_frac2 = 0.9;
    double step_factor = 10.0;
    double poly_power = 0.9;
    double dropout_low = 0.2;
    double dropout_high = 0.4;
    double focal_gamma = 2.0;
    std::uint64_t seed = 0;
    Mode mode = Mode::pretrain;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw ConfigError("train config: epochs/batch_size must be >= 1");
        if (!(lr0 > 0)) throw ConfigError("train config: lr0 must be positive");
        if (weight_decay < 0) throw ConfigError("train config: negative weight decay");
        if (!(step_frac1 > 0 && step_frac1 < step_frac2 && step_frac2 < 1)) {
            throw ConfigError("train config: step fractions must be strictly increasing in (0,1)");
        }
        if (!(step_factor > 0)) throw ConfigError("train config: step factor must be positive");
        if (dropout_low < 0 || dropout_high < dropout_low || dropout_high >= 1) {
            throw ConfigError("train config: dropout range must satisfy 0 <= low <= high < 1");
        }
        if (focal_gamma < 0) throw ConfigError("train config: negative focal gamma");
    }
};

// Learning rate at an optimizer step. The step schedule holds lr0
// until step_frac1 of the run, divides by step_factor until
// step_frac2, and by step_factor^2 afterwards; the poly schedule is
// lr0 * (1 - step/total)^poly_power. Both are non-increasing.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// Decoupled-weight-decay Adam update of one parameter array. `t` is the
// 1-based step count for bias correction.
void adamw_step(std::vector<float>& param, const std::vector<float>& grad, std::vector<float>& m,
                std::vector<float>& v, std::int64_t t, double lr, double beta1, double beta2,
                double eps, double weight_decay);

struct NamedParam {
    std::string name;
    ValuePtr<float> value;
};

// Optimizer owning per-parameter moment state. Throws NumericalError on
// a non-finite gradient, naming the parameter.
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<NamedParam>& params, double lr, double weight_decay);

private:
    struct Moments {
        std::vector<float> m, v;
    };
    std::unordered_map<const Tensor*, Moments> state_;
    std::int64_t t_ = 0;
    double beta1_, beta2_, eps_;
};

void zero_param_grads(std::vector<NamedParam>& params);
void scale_param_grads(std::vector<NamedParam>& params, double factor);

// Value embedding plus stacked exchanger stages; the shared trunk of
// the classification and dense models.
struct Backbone {
    ModelConfig config;
    ValuePtr<float> embed_w;  // [channels x width]
    ValuePtr<float> embed_b;  // [width]
    std::vector<ExchangerStageParams<float>> stages;

    static Backbone init(const ModelConfig& mc, std::uint64_t seed);
    void collect_params(std::vector<NamedParam>& out);
};

struct ClassificationModel {
    Backbone backbone;
    ProjectorParams<float> projector;
    CosineClassifierParams<float> cosine;

    static ClassificationModel init(const ModelConfig& mc, std::uint64_t seed);
    std::vector<NamedParam> named_params();
};

struct DenseModel {
    Backbone backbone;
    DenseHeadParams<float> head;

    static DenseModel init(const ModelConfig& mc, std::uint64_t seed);
    std::vector<NamedParam> named_params();
};

// Bag-level class logits of one pixel-set sample: per-pixel temporal
// encoding with shared weights, temporal pooling, MIL pooling,
// projector, cosine classifier.
ValuePtr<float> classification_logits(Graph& g, ClassificationModel& model,
                                      const PixelSetSample& sample);

// Per-pixel class logits [H*W x classes] of one grid sample.
ValuePtr<float> dense_logits(Graph& g, DenseModel& model, const GridSample& grid);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double precision_pct = 0;
    double recall_pct = 0;
    double f1_pct = 0;
    double miou_pct = 0;
    double seconds = 0;
};

struct RunMetrics {
    std::vector<EpochRecord> epochs;
    double initial_train_loss = 0;
    bool aborted = false;
    std::string note;
};

struct ClassificationEval {
    double mean_loss = 0;
    ClassificationMetrics metrics;
    Confusion confusion{1};
};

struct DenseEval {
    double mean_loss = 0;
    double miou_pct = 0;
    Confusion confusion{1};
};

ClassificationEval evaluate_classification(ClassificationModel& model, const Dataset& data);
DenseEval evaluate_dense(DenseModel& model, const Dataset& data, double focal_gamma);

struct PretrainOutput {
    Checkpoint checkpoint;
    RunMetrics metrics;
};

// Classification pretraining with temporal-dropout augmentation.
// Deterministic given (config, seed, dataset). On divergence the run
// aborts and the checkpoint of the last finished epoch is returned.
PretrainOutput run_pretrain(const Dataset& train, const Dataset& val, const ModelConfig& mc,
                            const TrainConfig& tc);

struct FinetuneOutput {
    Checkpoint checkpoint;
    RunMetrics metrics;
};

// Dense per-pixel finetuning with focal loss, from scratch or from a
// pretrained backbone checkpoint.
FinetuneOutput run_finetune(const Dataset& train_grids, const Dataset& val_grids,
                            const ModelConfig& mc, const TrainConfig& tc,
                            const Checkpoint* init_backbone);

// First epoch (1-based) whose validation mIoU reaches `target_pct`, or
// -1 if never reached.
int epochs_to_reach_miou(const RunMetrics& metrics, double target_pct);

// Checkpoint conversion and the parameter fingerprint used for
// reproducibility audits. The fingerprint hashes names and raw float
// bytes of every parameter whose name starts with `prefix`.
Checkpoint make_checkpoint(const ModelConfig& mc, std::vector<NamedParam>& params);
void load_params_from_checkpoint(const Checkpoint& ck, std::vector<NamedParam>& params,
                                 const std::string& prefix);
std::string fingerprint_params(std::vector<NamedParam>& params, const std::string& prefix = "");

// Per-stage temporal features of one pixel-set sample, pixel-averaged:
// one [T x width] tensor per stage. Used by feature export.
std::vector<Tensor> export_stage_features(ClassificationModel& model, const PixelSetSample& sample);

}  // namespace exchanger
