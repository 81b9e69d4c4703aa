#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "exchanger/errors.hpp"
#include "exchanger/tensor.hpp"

namespace exchanger {

// Acquisition times of one sample. Timestamps are day-of-year for the
// calendar axis or accumulated growing degree days for the thermal
// axis. Acquisitions form a set, not a sequence: the order carries no
// meaning and no monotonicity is assumed.
struct TimeAxis {
    std::vector<float> timestamps;
    std::vector<std::uint8_t> valid;

    std::int64_t steps() const { return static_cast<std::int64_t>(timestamps.size()); }

    std::int64_t valid_count() const {
        std::int64_t n = 0;
        for (auto v : valid) n += v ? 1 : 0;
        return n;
    }

    static TimeAxis all_valid(std::vector<float> ts) {
        TimeAxis ax;
        ax.valid.assign(ts.size(), 1);
        ax.timestamps = std::move(ts);
        return ax;
    }
};

// Sinusoidal position embedding of continuous timestamps. Row k is
// [sin(t_k/w_0), cos(t_k/w_0), sin(t_k/w_1), cos(t_k/w_1), ...] with
// wavelengths w_i = max_period^(2i/d_pe). Rows of invalid steps are
// zero. Equal timestamps produce identical rows, and permuting the
// axis permutes rows, nothing else.
template <typename S>
ValuePtr<S> sinusoidal_pe(const TimeAxis& axis, std::int64_t d_pe, double max_period) {
    if (d_pe <= 0 || d_pe % 2 != 0) {
        throw ConfigError("sinusoidal_pe: embedding width must be a positive even number, got " +
                          std::to_string(d_pe));
    }
    if (!(max_period > 0)) throw ConfigError("sinusoidal_pe: max_period must be positive");
    if (axis.valid.size() != axis.timestamps.size()) {
        throw DimensionError("sinusoidal_pe: mask length " + std::to_string(axis.valid.size()) +
                             " vs " + std::to_string(axis.timestamps.size()) + " timestamps");
    }
    const std::int64_t t_len = axis.steps();
    auto out = zeros<S>({t_len, d_pe});
    const std::int64_t pairs = d_pe / 2;
    std::vector<double> inv_wavelength(static_cast<std::size_t>(pairs));
    for (std::int64_t i = 0; i < pairs; ++i) {
        inv_wavelength[static_cast<std::size_t>(i)] =
            1.0 / std::pow(max_period, 2.0 * static_cast<double>(i) / static_cast<double>(d_pe));
    }
    for (std::int64_t k = 0; k < t_len; ++k) {
        if (!axis.valid[static_cast<std::size_t>(k)]) continue;
        const double t = axis.timestamps[static_cast<std::size_t>(k)];
        for (std::int64_t i = 0; i < pairs; ++i) {
            const double phase = t * inv_wavelength[static_cast<std::size_t>(i)];
            out->values[static_cast<std::size_t>(k * d_pe + 2 * i)] = static_cast<S>(std::sin(phase));
            out->values[static_cast<std::size_t>(k * d_pe + 2 * i + 1)] = static_cast<S>(std::cos(phase));
        }
    }
    return out;
}

// Accumulated growing degree days. Daily temperature arrays cover days
// 1..D; the value at an acquisition day is the sum of
// max(0, (tmin+tmax)/2 - t_base) over days 1..day inclusive.
inline TimeAxis gdd_accumulate(const std::vector<double>& daily_tmin,
                               const std::vector<double>& daily_tmax, double t_base,
                               const std::vector<int>& acquisition_days) {
    if (daily_tmin.size() != daily_tmax.size()) {
        throw DimensionError("gdd_accumulate: tmin has " + std::to_string(daily_tmin.size()) +
                             " days, tmax has " + std::to_string(daily_tmax.size()));
    }
    const int coverage = static_cast<int>(daily_tmin.size());
    std::vector<double> cumulative(daily_tmin.size());
    double acc = 0;
    for (std::size_t d = 0; d < daily_tmin.size(); ++d) {
        const double mean = 0.5 * (daily_tmin[d] + daily_tmax[d]);
        acc += std::max(0.0, mean - t_base);
        cumulative[d] = acc;
    }
    TimeAxis out;
    out.timestamps.reserve(acquisition_days.size());
    for (const int day : acquisition_days) {
        if (day < 1 || day > coverage) {
            throw RangeError("gdd_accumulate: acquisition day " + std::to_string(day) +
                             " outside temperature coverage [1," + std::to_string(coverage) + "]");
        }
        out.timestamps.push_back(static_cast<float>(cumulative[static_cast<std::size_t>(day - 1)]));
    }
    out.valid.assign(acquisition_days.size(), 1);
    return out;
}

// Thermal position embedding: the sinusoidal embedding evaluated on an
// accumulated degree-day axis instead of calendar time.
template <typename S>
ValuePtr<S> thermal_pe(const TimeAxis& gdd_axis, std::int64_t d_pe, double max_gdd_period) {
    return sinusoidal_pe<S>(gdd_axis, d_pe, max_gdd_period);
}

}  // namespace exchanger
