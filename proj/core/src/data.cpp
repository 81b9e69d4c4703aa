#include "exchanger/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "exchanger/errors.hpp"
#include "exchanger/random.hpp"
#include "exchanger/serialize.hpp"

// Dataset file layout
//
//   magic      "SITS1" (5 bytes, no terminator)
//   header     one JSON line: version, kind ("pixelset"|"grid"),
//              classes, channels, class_names, count, config_sha1
//   records    count records, each:
//                parcel_id u32 LE
//                label     u32 LE       (0 for grid records)
//                T         u32 LE
//                C         u32 LE
//                N_pix u32 LE           (pixel-set)  |  H u32, W u32 (grid)
//                mask      T bytes (0/1)
//                timestamps T * f32 LE
//                values    T*C*N_pix (or T*C*H*W) * f32 LE
//                labels    H*W * i32 LE (grid records only; -1 = ignore)
//
// The record grammar is shared between the two formats and
// discriminated by the header `kind`; grid records append the label
// map as a trailing field since a single u32 cannot carry per-pixel
// annotations.

namespace exchanger {

using nlohmann::json;

double double_logistic(const ClassPrior& p, double t) {
    const double up = 1.0 / (1.0 + std::exp(-p.growth_rate * (t - p.start_day)));
    const double down = 1.0 / (1.0 + std::exp(-p.senescence_rate * (t - p.end_day)));
    return p.amplitude * (up - down) + p.base;
}

std::vector<ClassPrior> default_priors(int classes, int channels) {
    if (classes < 1) throw ConfigError("default_priors: need at least one class");
    std::vector<ClassPrior> priors;
    priors.reserve(static_cast<std::size_t>(classes));
    for (int k = 0; k < classes; ++k) {
        ClassPrior p;
        if (k == 0) {
            p.name = "soil";
            p.amplitude = 0.05;
            p.base = 0.12;
            p.start_day = 100;
            p.end_day = 240;
            p.growth_rate = 0.02;
            p.senescence_rate = 0.02;
        } else if (k <= 3) {
            // Timing classes: same curve shape and height, shifted season.
            p.name = "season_" + std::to_string(k);
            p.amplitude = 0.85;
            p.base = 0.10;
            p.start_day = 90.0 + 45.0 * (k - 1);
            p.end_day = p.start_day + 65.0;
            p.growth_rate = 0.12;
            p.senescence_rate = 0.10;
        } else {
            p.name = "amp_" + std::to_string(k);
            p.amplitude = (k % 2 == 0) ? 1.25 : 0.45;
            p.base = 0.10;
            p.start_day = 110.0 + 10.0 * (k % 3);
            p.end_day = p.start_day + 80.0;
            p.growth_rate = 0.10;
            p.senescence_rate = 0.09;
        }
        // Channel calibration is shared across classes: the timing
        // classes must differ only in when their season happens, never
        // in any per-channel baseline a time-blind model could read.
        p.channel_gain.resize(static_cast<std::size_t>(channels));
        p.channel_offset.resize(static_cast<std::size_t>(channels));
        for (int c = 0; c < channels; ++c) {
            p.channel_gain[static_cast<std::size_t>(c)] = 1.0 - 0.18 * c;
            p.channel_offset[static_cast<std::size_t>(c)] = 0.01 * c;
        }
        priors.push_back(std::move(p));
    }
    return priors;
}

namespace {

struct ResolvedConfig {
    SynthConfig cfg;
};

ResolvedConfig resolve(const SynthConfig& in) {
    ResolvedConfig r{in};
    if (r.cfg.classes < 1) throw ConfigError("generate_synthetic: classes must be >= 1");
    if (r.cfg.channels < 1) throw ConfigError("generate_synthetic: channels must be >= 1");
    if (r.cfg.t_min < 1 || r.cfg.t_max < r.cfg.t_min) {
        throw ConfigError("generate_synthetic: bad sequence length range [" +
                          std::to_string(r.cfg.t_min) + "," + std::to_string(r.cfg.t_max) + "]");
    }
    if (r.cfg.t_max > r.cfg.season_days) {
        throw ConfigError("generate_synthetic: t_max exceeds season length");
    }
    if (r.cfg.n_pix < 1) throw ConfigError("generate_synthetic: n_pix must be >= 1");
    if (r.cfg.cloud_dropout < 0 || r.cfg.cloud_dropout >= 1) {
        throw ConfigError("generate_synthetic: cloud_dropout must be in [0,1)");
    }
    if (r.cfg.priors.empty()) r.cfg.priors = default_priors(r.cfg.classes, r.cfg.channels);
    if (static_cast<int>(r.cfg.priors.size()) != r.cfg.classes) {
        throw ConfigError("generate_synthetic: " + std::to_string(r.cfg.priors.size()) +
                          " priors for " + std::to_string(r.cfg.classes) + " classes");
    }
    for (const auto& p : r.cfg.priors) {
        if (static_cast<int>(p.channel_gain.size()) != r.cfg.channels ||
            static_cast<int>(p.channel_offset.size()) != r.cfg.channels) {
            throw ConfigError("generate_synthetic: prior '" + p.name +
                              "' channel arrays do not match channel count");
        }
        for (int day = 1; day <= r.cfg.season_days; day += 7) {
            const double v = double_logistic(p, day);
            if (!std::isfinite(v)) {
                throw ConfigError("generate_synthetic: prior '" + p.name +
                                  "' yields a non-finite curve");
            }
        }
    }
    return r;
}

// Per-sample draw of curve parameters around a class prior.
ClassPrior jitter_prior(const ClassPrior& p, Rng& rng) {
    ClassPrior q = p;
    q.amplitude *= 1.0 + rng.uniform(-p.amplitude_jitter, p.amplitude_jitter);
    q.start_day += rng.uniform(-p.day_jitter, p.day_jitter);
    q.end_day += rng.uniform(-p.day_jitter, p.day_jitter);
    q.growth_rate *= 1.0 + rng.uniform(-p.rate_jitter, p.rate_jitter);
    q.senescence_rate *= 1.0 + rng.uniform(-p.rate_jitter, p.rate_jitter);
    return q;
}

// Distinct acquisition days, uniform over the season, sorted.
std::vector<int> draw_days(Rng& rng, int t_len, int season_days) {
    std::vector<int> days(static_cast<std::size_t>(season_days));
    std::iota(days.begin(), days.end(), 1);
    for (int i = 0; i < t_len; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(
                              static_cast<std::uint64_t>(season_days - i)));
        std::swap(days[static_cast<std::size_t>(i)], days[static_cast<std::size_t>(j)]);
    }
    days.resize(static_cast<std::size_t>(t_len));
    std::sort(days.begin(), days.end());
    return days;
}

TimeAxis draw_time_axis(Rng& rng, const SynthConfig& cfg) {
    const int t_len = rng.uniform_int(cfg.t_min, cfg.t_max);
    const auto days = draw_days(rng, t_len, cfg.season_days);
    TimeAxis ax;
    ax.timestamps.reserve(days.size());
    for (const int d : days) ax.timestamps.push_back(static_cast<float>(d));
    ax.valid.assign(days.size(), 1);
    // Whole-timestep cloud obstruction.
    for (std::size_t t = 0; t < ax.valid.size(); ++t) {
        if (rng.uniform() < cfg.cloud_dropout) ax.valid[t] = 0;
    }
    bool any = false;
    for (auto v : ax.valid) any = any || v;
    if (!any) ax.valid[rng.uniform_index(ax.valid.size())] = 1;
    return ax;
}

PixelSetSample make_pixel_sample(const SynthConfig& cfg, std::uint32_t id, std::uint32_t label,
                                 std::uint64_t seed) {
    Rng rng(seed);
    PixelSetSample s;
    s.parcel_id = id;
    s.label = label;
    s.channels = cfg.channels;
    s.n_pix = cfg.n_pix;
    s.time = draw_time_axis(rng, cfg);
    s.t_len = s.time.steps();
    const ClassPrior prior = jitter_prior(cfg.priors[label], rng);
    std::vector<double> pixel_offset(static_cast<std::size_t>(cfg.n_pix));
    for (auto& o : pixel_offset) o = rng.normal(0.0, cfg.pixel_offset_sigma);
    s.values.resize(static_cast<std::size_t>(s.t_len * s.channels * s.n_pix));
    for (std::int64_t t = 0; t < s.t_len; ++t) {
        const double curve = double_logistic(prior, s.time.timestamps[static_cast<std::size_t>(t)]);
        for (std::int64_t c = 0; c < s.channels; ++c) {
            const double base = prior.channel_gain[static_cast<std::size_t>(c)] * curve +
                                prior.channel_offset[static_cast<std::size_t>(c)];
            for (std::int64_t p = 0; p < s.n_pix; ++p) {
                s.value(t, c, p) = static_cast<float>(base + pixel_offset[static_cast<std::size_t>(p)] +
                                                      rng.normal(0.0, cfg.noise_sigma));
            }
        }
    }
    return s;
}

GridSample make_grid_sample(const SynthConfig& cfg, std::uint32_t id, std::uint64_t seed) {
    Rng rng(seed);
    GridSample g;
    g.image_id = id;
    g.channels = cfg.channels;
    g.height = cfg.grid_height;
    g.width = cfg.grid_width;
    g.time = draw_time_axis(rng, cfg);
    g.t_len = g.time.steps();
    g.labels.assign(static_cast<std::size_t>(g.height * g.width), 0);  // background soil

    // Paint rectangular parcels over the soil background; later parcels
    // overwrite earlier ones.
    const int n_parcels = rng.uniform_int(cfg.parcels_min, cfg.parcels_max);
    std::vector<int> parcel_of_pixel(static_cast<std::size_t>(g.height * g.width), -1);
    std::vector<std::uint32_t> parcel_class(static_cast<std::size_t>(n_parcels));
    for (int pc = 0; pc < n_parcels; ++pc) {
        parcel_class[static_cast<std::size_t>(pc)] =
            static_cast<std::uint32_t>(rng.uniform_index(static_cast<std::uint64_t>(cfg.classes)));
        const int ph = rng.uniform_int(2, std::max(2, static_cast<int>(g.height) / 2));
        const int pw = rng.uniform_int(2, std::max(2, static_cast<int>(g.width) / 2));
        const int y0 = rng.uniform_int(0, static_cast<int>(g.height) - ph);
        const int x0 = rng.uniform_int(0, static_cast<int>(g.width) - pw);
        for (int y = y0; y < y0 + ph; ++y) {
            for (int x = x0; x < x0 + pw; ++x) {
                parcel_of_pixel[static_cast<std::size_t>(y * g.width + x)] = pc;
                g.labels[static_cast<std::size_t>(y * g.width + x)] =
                    static_cast<std::int32_t>(parcel_class[static_cast<std::size_t>(pc)]);
            }
        }
    }

    // One curve-parameter draw per parcel plus one for the background.
    std::vector<ClassPrior> parcel_prior;
    parcel_prior.reserve(static_cast<std::size_t>(n_parcels) + 1);
    parcel_prior.push_back(jitter_prior(cfg.priors[0], rng));  // background
    for (int pc = 0; pc < n_parcels; ++pc)
        parcel_prior.push_back(jitter_prior(cfg.priors[parcel_class[static_cast<std::size_t>(pc)]], rng));

    std::vector<double> pixel_offset(static_cast<std::size_t>(g.height * g.width));
    for (auto& o : pixel_offset) o = rng.normal(0.0, cfg.pixel_offset_sigma);

    g.values.resize(static_cast<std::size_t>(g.t_len * g.channels * g.height * g.width));
    for (std::int64_t t = 0; t < g.t_len; ++t) {
        const double day = g.time.timestamps[static_cast<std::size_t>(t)];
        for (std::int64_t y = 0; y < g.height; ++y) {
            for (std::int64_t x = 0; x < g.width; ++x) {
                const int pc = parcel_of_pixel[static_cast<std::size_t>(y * g.width + x)];
                const ClassPrior& prior = parcel_prior[static_cast<std::size_t>(pc + 1)];
                const double curve = double_logistic(prior, day);
                for (std::int64_t c = 0; c < g.channels; ++c) {
                    const double v = prior.channel_gain[static_cast<std::size_t>(c)] * curve +
                                     prior.channel_offset[static_cast<std::size_t>(c)] +
                                     pixel_offset[static_cast<std::size_t>(y * g.width + x)] +
                                     rng.normal(0.0, cfg.noise_sigma);
                    g.value(t, c, y, x) = static_cast<float>(v);
                }
            }
        }
    }
    return g;
}

std::vector<std::string> prior_names(const SynthConfig& cfg) {
    std::vector<std::string> names;
    names.reserve(cfg.priors.size());
    for (const auto& p : cfg.priors) names.push_back(p.name);
    return names;
}

}  // namespace

SynthResult generate_synthetic(const SynthConfig& cfg_in, int n_samples, std::uint64_t seed,
                               int threads) {
    const SynthConfig cfg = resolve(cfg_in).cfg;
    if (n_samples < 0) throw ConfigError("generate_synthetic: negative sample count");
    if (threads < 1) throw ConfigError("generate_synthetic: thread count must be >= 1");

    SynthResult out;
    out.pixel.header.kind = DatasetKind::pixel_set;
    out.pixel.header.n_classes = cfg.classes;
    out.pixel.header.channels = cfg.channels;
    out.pixel.header.class_names = prior_names(cfg);
    out.grid.header = out.pixel.header;
    out.grid.header.kind = DatasetKind::grid;

    // Stratified labels shuffled deterministically: exact class balance
    // up to remainder.
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i)
        labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % cfg.classes);
    Rng shuffle_rng(mix_seed(seed, 0x5ab31510ULL));
    for (int i = n_samples - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
        std::swap(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
    }

    out.pixel.pixel_samples.resize(static_cast<std::size_t>(n_samples));
    out.grid.grid_samples.resize(static_cast<std::size_t>(cfg.grid_count));
    auto fill_range = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            if (i < n_samples) {
                out.pixel.pixel_samples[static_cast<std::size_t>(i)] = make_pixel_sample(
                    cfg, static_cast<std::uint32_t>(i), labels[static_cast<std::size_t>(i)],
                    mix_seed(seed, 0x70000000ULL + static_cast<std::uint64_t>(i)));
            }
            const int gi = i - n_samples;
            if (gi >= 0 && gi < cfg.grid_count) {
                out.grid.grid_samples[static_cast<std::size_t>(gi)] = make_grid_sample(
                    cfg, static_cast<std::uint32_t>(gi),
                    mix_seed(seed, 0x47000000ULL + static_cast<std::uint64_t>(gi)));
            }
        }
    };
    const int total = n_samples + cfg.grid_count;
    if (threads == 1 || total < 2) {
        fill_range(0, total);
    } else {
        const int workers = std::min(threads, total);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        const int chunk = (total + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int b = w * chunk;
            const int e = std::min(total, b + chunk);
            if (b >= e) break;
            pool.emplace_back(fill_range, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

PixelSetSample grid_to_pixelset(const GridSample& g, const std::vector<std::uint8_t>& parcel_mask,
                                std::int64_t n_pix, std::uint64_t seed) {
    if (static_cast<std::int64_t>(parcel_mask.size()) != g.height * g.width) {
        throw DimensionError("grid_to_pixelset: mask has " + std::to_string(parcel_mask.size()) +
                             " entries for a " + std::to_string(g.height) + "x" +
                             std::to_string(g.width) + " grid");
    }
    if (n_pix < 1) throw ConfigError("grid_to_pixelset: n_pix must be >= 1");
    std::vector<std::int64_t> members;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(parcel_mask.size()); ++i) {
        if (parcel_mask[static_cast<std::size_t>(i)]) members.push_back(i);
    }
    if (members.empty()) throw DataError("grid_to_pixelset: parcel mask selects no pixels");

    Rng rng(seed);
    std::vector<std::int64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(n_pix));
    if (static_cast<std::int64_t>(members.size()) >= n_pix) {
        // Without replacement: partial Fisher-Yates.
        std::vector<std::int64_t> pool = members;
        for (std::int64_t i = 0; i < n_pix; ++i) {
            const std::int64_t j =
                i + static_cast<std::int64_t>(rng.uniform_index(pool.size() - static_cast<std::size_t>(i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            chosen.push_back(pool[static_cast<std::size_t>(i)]);
        }
    } else {
        for (std::int64_t i = 0; i < n_pix; ++i)
            chosen.push_back(members[rng.uniform_index(members.size())]);
    }

    PixelSetSample s;
    s.parcel_id = g.image_id;
    s.t_len = g.t_len;
    s.channels = g.channels;
    s.n_pix = n_pix;
    s.time = g.time;
    const std::int32_t lab = g.labels[static_cast<std::size_t>(chosen[0])];
    s.label = lab == kIgnoreLabel ? 0 : static_cast<std::uint32_t>(lab);
    s.values.resize(static_cast<std::size_t>(s.t_len * s.channels * s.n_pix));
    for (std::int64_t t = 0; t < s.t_len; ++t) {
        for (std::int64_t c = 0; c < s.channels; ++c) {
            for (std::int64_t p = 0; p < n_pix; ++p) {
                const std::int64_t pix = chosen[static_cast<std::size_t>(p)];
                s.value(t, c, p) = g.value(t, c, pix / g.width, pix % g.width);
            }
        }
    }
    return s;
}

namespace {

// Sorted step subset kept by temporal dropout.
std::vector<std::int64_t> dropout_keep(const TimeAxis& time, double rate_low, double rate_high,
                                       std::uint64_t seed) {
    if (rate_low < 0 || rate_high < rate_low || rate_high >= 1) {
        throw ConfigError("temporal_dropout: rates must satisfy 0 <= low <= high < 1");
    }
    std::vector<std::int64_t> valid_steps;
    for (std::int64_t t = 0; t < time.steps(); ++t) {
        if (time.valid[static_cast<std::size_t>(t)]) valid_steps.push_back(t);
    }
    if (valid_steps.empty()) throw DataError("temporal_dropout: sample has no valid steps");
    Rng rng(seed);
    const double r = rng.uniform(rate_low, rate_high);
    std::int64_t keep_n = static_cast<std::int64_t>(
        std::ceil((1.0 - r) * static_cast<double>(valid_steps.size())));
    keep_n = std::max<std::int64_t>(1, std::min<std::int64_t>(keep_n, valid_steps.size()));
    for (std::int64_t i = 0; i < keep_n; ++i) {
        const std::int64_t j = i + static_cast<std::int64_t>(rng.uniform_index(
                                       valid_steps.size() - static_cast<std::size_t>(i)));
        std::swap(valid_steps[static_cast<std::size_t>(i)], valid_steps[static_cast<std::size_t>(j)]);
    }
    valid_steps.resize(static_cast<std::size_t>(keep_n));
    std::sort(valid_steps.begin(), valid_steps.end());
    return valid_steps;
}

}  // namespace

PixelSetSample temporal_dropout(const PixelSetSample& s, double rate_low, double rate_high,
                                std::uint64_t seed) {
    const auto keep = dropout_keep(s.time, rate_low, rate_high, seed);
    PixelSetSample out;
    out.parcel_id = s.parcel_id;
    out.label = s.label;
    out.channels = s.channels;
    out.n_pix = s.n_pix;
    out.t_len = static_cast<std::int64_t>(keep.size());
    out.time.timestamps.reserve(keep.size());
    for (const auto t : keep)
        out.time.timestamps.push_back(s.time.timestamps[static_cast<std::size_t>(t)]);
    out.time.valid.assign(keep.size(), 1);
    out.values.resize(static_cast<std::size_t>(out.t_len * out.channels * out.n_pix));
    const std::int64_t step = s.channels * s.n_pix;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy(s.values.begin() + static_cast<std::ptrdiff_t>(keep[i] * step),
                  s.values.begin() + static_cast<std::ptrdiff_t>((keep[i] + 1) * step),
                  out.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * step));
    }
    return out;
}

GridSample temporal_dropout_grid(const GridSample& g, double rate_low, double rate_high,
                                 std::uint64_t seed) {
    const auto keep = dropout_keep(g.time, rate_low, rate_high, seed);
    GridSample out;
    out.image_id = g.image_id;
    out.channels = g.channels;
    out.height = g.height;
    out.width = g.width;
    out.labels = g.labels;
    out.t_len = static_cast<std::int64_t>(keep.size());
    out.time.timestamps.reserve(keep.size());
    for (const auto t : keep)
        out.time.timestamps.push_back(g.time.timestamps[static_cast<std::size_t>(t)]);
    out.time.valid.assign(keep.size(), 1);
    const std::int64_t step = g.channels * g.height * g.width;
    out.values.resize(static_cast<std::size_t>(out.t_len * step));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy(g.values.begin() + static_cast<std::ptrdiff_t>(keep[i] * step),
                  g.values.begin() + static_cast<std::ptrdiff_t>((keep[i] + 1) * step),
                  out.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * step));
    }
    return out;
}

namespace {

constexpr char kMagic[5] = {'S', 'I', 'T', 'S', '1'};
constexpr std::uint32_t kMaxDim = 1u << 20;

void check_dim(std::uint32_t v, const std::string& field) {
    if (v == 0 || v > kMaxDim) {
        throw FormatError("dataset record: implausible " + field + " = " + std::to_string(v));
    }
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(kMagic, 5);
    json header;
    header["version"] = ds.header.version;
    header["kind"] = ds.header.kind == DatasetKind::pixel_set ? "pixelset" : "grid";
    header["classes"] = ds.header.n_classes;
    header["channels"] = ds.header.channels;
    header["class_names"] = ds.header.class_names;
    header["count"] = ds.size();
    header["config_sha1"] = ds.header.config_sha1;
    os << header.dump() << '\n';
    if (ds.header.kind == DatasetKind::pixel_set) {
        for (const auto& s : ds.pixel_samples) {
            write_u32(os, s.parcel_id);
            write_u32(os, s.label);
            write_u32(os, static_cast<std::uint32_t>(s.t_len));
            write_u32(os, static_cast<std::uint32_t>(s.channels));
            write_u32(os, static_cast<std::uint32_t>(s.n_pix));
            write_bytes(os, s.time.valid.data(), s.time.valid.size());
            for (const float t : s.time.timestamps) write_f32(os, t);
            for (const float v : s.values) write_f32(os, v);
        }
    } else {
        for (const auto& g : ds.grid_samples) {
            write_u32(os, g.image_id);
            write_u32(os, 0);
            write_u32(os, static_cast<std::uint32_t>(g.t_len));
            write_u32(os, static_cast<std::uint32_t>(g.channels));
            write_u32(os, static_cast<std::uint32_t>(g.height));
            write_u32(os, static_cast<std::uint32_t>(g.width));
            write_bytes(os, g.time.valid.data(), g.time.valid.size());
            for (const float t : g.time.timestamps) write_f32(os, t);
            for (const float v : g.values) write_f32(os, v);
            for (const std::int32_t l : g.labels) write_i32(os, l);
        }
    }
    if (!os) throw FormatError("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    char magic[5];
    is.read(magic, 5);
    if (is.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0) {
        throw FormatError("dataset: bad magic, expected SITS1");
    }
    const std::string header_line = read_line(is, "dataset header");
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("dataset: unparseable header: ") + e.what());
    }
    Dataset ds;
    try {
        ds.header.version = header.at("version").get<int>();
        const std::string kind = header.at("kind").get<std::string>();
        if (kind == "pixelset") {
            ds.header.kind = DatasetKind::pixel_set;
        } else if (kind == "grid") {
            ds.header.kind = DatasetKind::grid;
        } else {
            throw FormatError("dataset: unknown kind '" + kind + "'");
        }
        ds.header.n_classes = header.at("classes").get<int>();
        ds.header.channels = header.at("channels").get<int>();
        ds.header.class_names = header.at("class_names").get<std::vector<std::string>>();
        ds.header.config_sha1 = header.value("config_sha1", "");
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset: bad header field: ") + e.what());
    }
    if (ds.header.version != 1) {
        throw FormatError("dataset: unsupported version " + std::to_string(ds.header.version));
    }
    const std::uint64_t count = header.at("count").get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string rec = "record " + std::to_string(i);
        if (ds.header.kind == DatasetKind::pixel_set) {
            PixelSetSample s;
            s.parcel_id = read_u32(is, rec + ": parcel_id");
            s.label = read_u32(is, rec + ": label");
            const std::uint32_t t = read_u32(is, rec + ": T");
            const std::uint32_t c = read_u32(is, rec + ": C");
            const std::uint32_t n = read_u32(is, rec + ": N_pix");
            check_dim(t, rec + ": T");
            check_dim(c, rec + ": C");
            check_dim(n, rec + ": N_pix");
            s.t_len = t;
            s.channels = c;
            s.n_pix = n;
            s.time.valid.resize(t);
            read_bytes(is, s.time.valid.data(), t, rec + ": mask");
            s.time.timestamps.resize(t);
            for (auto& ts : s.time.timestamps) ts = read_f32(is, rec + ": timestamps");
            s.values.resize(static_cast<std::size_t>(s.t_len * s.channels * s.n_pix));
            for (auto& v : s.values) v = read_f32(is, rec + ": values");
            ds.pixel_samples.push_back(std::move(s));
        } else {
            GridSample g;
            g.image_id = read_u32(is, rec + ": parcel_id");
            read_u32(is, rec + ": label");
            const std::uint32_t t = read_u32(is, rec + ": T");
            const std::uint32_t c = read_u32(is, rec + ": C");
            const std::uint32_t h = read_u32(is, rec + ": H");
            const std::uint32_t w = read_u32(is, rec + ": W");
            check_dim(t, rec + ": T");
            check_dim(c, rec + ": C");
            check_dim(h, rec + ": H");
            check_dim(w, rec + ": W");
            g.t_len = t;
            g.channels = c;
            g.height = h;
            g.width = w;
            g.time.valid.resize(t);
            read_bytes(is, g.time.valid.data(), t, rec + ": mask");
            g.time.timestamps.resize(t);
            for (auto& ts : g.time.timestamps) ts = read_f32(is, rec + ": timestamps");
            g.values.resize(static_cast<std::size_t>(g.t_len * g.channels * g.height * g.width));
            for (auto& v : g.values) v = read_f32(is, rec + ": values");
            g.labels.resize(static_cast<std::size_t>(g.height * g.width));
            for (auto& l : g.labels) l = read_i32(is, rec + ": labels");
            ds.grid_samples.push_back(std::move(g));
        }
    }
    return ds;
}

}  // namespace exchanger
