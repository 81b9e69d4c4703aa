#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "exchanger/tensor.hpp"
#include "exchanger/time_encoding.hpp"

namespace exchanger {

constexpr std::int32_t kIgnoreLabel = -1;

// One parcel in pixel-set format: values laid out [T][C][N_pix]
// row-major. Pixels are an unordered bag of instances; time steps form
// a set described by `time`.
struct PixelSetSample {
    std::uint32_t parcel_id = 0;
    std::uint32_t label = 0;
    std::int64_t t_len = 0;
    std::int64_t channels = 0;
    std::int64_t n_pix = 0;
    TimeAxis time;
    std::vector<float> values;

    float value(std::int64_t t, std::int64_t c, std::int64_t p) const {
        return values[static_cast<std::size_t>((t * channels + c) * n_pix + p)];
    }
    float& value(std::int64_t t, std::int64_t c, std::int64_t p) {
        return values[static_cast<std::size_t>((t * channels + c) * n_pix + p)];
    }
};

// One spatial chip: values laid out [T][C][H][W], a per-pixel label map
// (kIgnoreLabel marks unlabeled pixels), one shared time axis.
struct GridSample {
    std::uint32_t image_id = 0;
    std::int64_t t_len = 0;
    std::int64_t channels = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    TimeAxis time;
    std::vector<float> values;
    std::vector<std::int32_t> labels;  // H*W entries

    float value(std::int64_t t, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>(((t * channels + c) * height + y) * width + x)];
    }
    float& value(std::int64_t t, std::int64_t c, std::int64_t y, std::int64_t x) {
        return values[static_cast<std::size_t>(((t * channels + c) * height + y) * width + x)];
    }
    std::int32_t label_at(std::int64_t y, std::int64_t x) const {
        return labels[static_cast<std::size_t>(y * width + x)];
    }
};

enum class DatasetKind { pixel_set, grid };

struct DatasetHeader {
    DatasetKind kind = DatasetKind::pixel_set;
    int version = 1;
    int n_classes = 0;
    int channels = 0;
    std::vector<std::string> class_names;
    std::string config_sha1;  // hash of the producing config, empty if none
};

struct Dataset {
    DatasetHeader header;
    std::vector<PixelSetSample> pixel_samples;
    std::vector<GridSample> grid_samples;

    std::size_t size() const {
        return header.kind == DatasetKind::pixel_set ? pixel_samples.size() : grid_samples.size();
    }
};

// Double-logistic phenology prior of one class. The noise-free curve is
//   v(t) = amplitude * (sigmoid(growth*(t-start)) - sigmoid(senescence*(t-end))) + base
// and channel c observes gain[c]*v(t) + offset[c].
struct ClassPrior {
    std::string name;
    double amplitude = 0.8;
    double base = 0.1;
    double start_day = 120;
    double end_day = 190;
    double growth_rate = 0.12;
    double senescence_rate = 0.10;
    double amplitude_jitter = 0.06;  // relative
    double day_jitter = 6.0;         // absolute, days
    double rate_jitter = 0.10;       // relative
    std::vector<double> channel_gain;
    std::vector<double> channel_offset;
};

struct SynthConfig {
    int classes = 5;
    int channels = 3;
    int t_min = 20;
    int t_max = 40;
    int n_pix = 8;
    int season_days = 365;
    double noise_sigma = 0.02;
    double pixel_offset_sigma = 0.02;
    double cloud_dropout = 0.10;
    int grid_height = 8;
    int grid_width = 8;
    int parcels_min = 2;
    int parcels_max = 6;
    int grid_count = 0;  // grid samples produced per generate call
    std::vector<ClassPrior> priors;  // filled with defaults when empty
};

// Default priors: class 0 is a flat bare-soil profile, classes 1..3
// share one amplitude and differ only in season timing (so they are
// separable by acquisition date, not by the bag of values), remaining
// classes alternate amplitude levels.
std::vector<ClassPrior> default_priors(int classes, int channels);

double double_logistic(const ClassPrior& p, double t);

struct SynthResult {
    Dataset pixel;  // n_samples pixel-set parcels
    Dataset grid;   // cfg.grid_count spatial chips from the same priors
};

// Deterministic synthetic phenology generator. Identical (cfg,
// n_samples, seed) produce bit-identical datasets for any thread
// count: every sample derives its own seed from (seed, index).
SynthResult generate_synthetic(const SynthConfig& cfg, int n_samples, std::uint64_t seed,
                               int threads = 1);

// Extract a pixel-set sample from a grid parcel mask (H*W bools).
// Samples without replacement when the parcel has at least n_pix
// pixels, with replacement otherwise.
PixelSetSample grid_to_pixelset(const GridSample& g, const std::vector<std::uint8_t>& parcel_mask,
                                std::int64_t n_pix, std::uint64_t seed);

// Cloud-style augmentation: draw r ~ U[rate_low, rate_high], keep a
// uniformly random subset of ceil((1-r) * T_valid) valid steps (at
// least one), and slice values and time axis consistently.
PixelSetSample temporal_dropout(const PixelSetSample& s, double rate_low, double rate_high,
                                std::uint64_t seed);
GridSample temporal_dropout_grid(const GridSample& g, double rate_low, double rate_high,
                                 std::uint64_t seed);

// Dataset file IO; see the format notes in data.cpp. Round trips are
// bit-exact in both directions.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace exchanger
