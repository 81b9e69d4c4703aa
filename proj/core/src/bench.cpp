#include "exchanger/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#ifdef __linux__
#include <sched.h>
#endif

#include "exchanger/errors.hpp"
#include "exchanger/random.hpp"

namespace exchanger {

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw ContractError("fit_loglog_slope: need at least two matching points");
    }
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0) || !(y[i] > 0)) throw ContractError("fit_loglog_slope: non-positive point");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    return num / den;
}

void pin_to_single_cpu() {
#ifdef __linux__
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(0, &set);
    sched_setaffinity(0, sizeof(set), &set);  // best effort, failures ignored
#endif
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct EncoderInstance {
    ExchangerConfig cfg;
    std::vector<ExchangerStageParams<float>> stages;
    SelfAttentionParams<float> baseline;
    bool is_baseline = false;
    ValuePtr<float> tokens;
    ValuePtr<float> positions;
    std::vector<std::uint8_t> mask;

    float run() const {
        Graph g;
        g.set_grad_enabled(false);
        ValuePtr<float> out;
        if (is_baseline) {
            out = self_attention_forward(g, cfg, baseline, tokens, positions, mask);
        } else {
            out = exchanger_forward(g, cfg, stages, tokens, positions, mask);
        }
        return out->values[0];  // defeat dead-code elimination
    }
};

// Keeps the measured forwards observable so they cannot be elided.
volatile float g_bench_sink = 0;
void consume_sink(float v) { g_bench_sink = v; }

EncoderInstance build_instance(const std::string& encoder, const ExchangerConfig& cfg,
                               std::int64_t t_len, std::uint64_t seed) {
    EncoderInstance inst;
    inst.cfg = cfg;
    if (encoder == "exchanger") {
        inst.stages = init_exchanger_params<float>(cfg, seed);
        for (auto& sp : inst.stages) {
            sp.for_each_param("", [](const std::string&, ValuePtr<float>& t) {
                t->requires_grad = false;
            });
        }
    } else if (encoder == "self_attention") {
        inst.is_baseline = true;
        inst.baseline = init_self_attention_params<float>(cfg, seed);
        inst.baseline.for_each_param("", [](const std::string&, ValuePtr<float>& t) {
            t->requires_grad = false;
        });
    } else {
        throw ConfigError("run_scaling: unknown encoder '" + encoder + "'");
    }
    Rng rng(mix_seed(seed, 0xBE9C0000ULL + static_cast<std::uint64_t>(t_len)));
    inst.tokens = randn<float>({t_len, cfg.width}, rng, 1.0);
    inst.positions = randn<float>({t_len, cfg.width}, rng, 1.0);
    inst.mask.assign(static_cast<std::size_t>(t_len), 1);
    return inst;
}

}  // namespace

ScalingResult run_scaling(const std::vector<std::string>& encoders,
                          const std::vector<std::int64_t>& t_list, const ExchangerConfig& cfg,
                          int repeats, std::uint64_t seed) {
    cfg.validate();
    if (repeats < 5) throw ConfigError("run_scaling: at least 5 repeats required");
    if (t_list.size() < 5) throw ConfigError("run_scaling: at least 5 sequence lengths required");
    for (std::size_t i = 1; i < t_list.size(); ++i) {
        if (t_list[i] <= t_list[i - 1]) throw ConfigError("run_scaling: T list must increase");
    }
    pin_to_single_cpu();

    ScalingResult result;
    for (const auto& encoder : encoders) {
        std::vector<double> xs, ys;
        for (const auto t_len : t_list) {
            EncoderInstance inst = build_instance(encoder, cfg, t_len, seed);
            float sink = 0;
            // Warmup, excluded from the statistics.
            sink += inst.run();
            sink += inst.run();
            // Inner loop grows until one timed batch clears the timer
            // floor, guarding against clock resolution at small T.
            int inner = 1;
            for (;;) {
                const auto t0 = Clock::now();
                for (int i = 0; i < inner; ++i) sink += inst.run();
                const double elapsed = ms_since(t0);
                if (elapsed >= 20.0 || inner >= (1 << 20)) break;
                inner *= 2;
            }
            std::vector<double> samples;
            samples.reserve(static_cast<std::size_t>(repeats));
            for (int r = 0; r < repeats; ++r) {
                const auto t0 = Clock::now();
                for (int i = 0; i < inner; ++i) sink += inst.run();
                samples.push_back(ms_since(t0) / inner);
            }
            consume_sink(sink);
            std::sort(samples.begin(), samples.end());
            BenchRecord rec;
            rec.encoder = encoder;
            rec.t_len = t_len;
            rec.clusters = cfg.clusters;
            rec.width = cfg.width;
            rec.heads = cfg.heads;
            rec.flops = encoder == "self_attention" ? self_attention_count_flops(cfg, t_len)
                                                    : count_flops(cfg, t_len);
            rec.median_ms = samples[samples.size() / 2];
            rec.min_ms = samples.front();
            rec.repeats = repeats;
            result.records.push_back(rec);
            xs.push_back(static_cast<double>(t_len));
            ys.push_back(rec.median_ms);

        }
        result.slopes.emplace_back(encoder, fit_loglog_slope(xs, ys));
    }
    return result;
}

std::string bench_records_csv(const std::vector<BenchRecord>& records) {
    std::ostringstream os;
    os << "encoder,T,clusters,width,heads,flops,median_ms,min_ms,repeats\n";
    for (const auto& r : records) {
        os << r.encoder << ',' << r.t_len << ',' << r.clusters << ',' << r.width << ',' << r.heads
           << ',' << r.flops << ',' << r.median_ms << ',' << r.min_ms << ',' << r.repeats << '\n';
    }
    return os.str();
}

}  // namespace exchanger
