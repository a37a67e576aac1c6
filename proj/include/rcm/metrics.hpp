#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "rcm/errors.hpp"
#include "rcm/geometry.hpp"
#include "rcm/simulator.hpp"
#include "rcm/solver.hpp"
#include "rcm/trajectory_io.hpp"

namespace rcm {

/// RCM deviation of one episode, in millimeters.
struct DeviationStats {
  double mean_mm = 0.0;
  double max_mm = 0.0;
  double min_mm = 0.0;
  double median_mm = 0.0;
  std::vector<double> series_mm;
};

struct TimedSeries {
  std::vector<double> t;
  std::vector<double> v;

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
};

struct SparcParams {
  double cutoff_hz = 10.0;
  double amp_threshold = 0.05;
  int padding_level = 4;
};

struct SmoothnessResult {
  double sparc = 0.0;
  double ldlj = 0.0;
  double sample_rate_hz = 5.0;
  std::size_t samples = 0;
};

inline double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (n % 2 == 1) {
    return *mid;
  }
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

inline DeviationStats summarize_deviation(std::vector<double> series_mm) {
  if (series_mm.empty()) {
    throw Error(Errc::empty_episode, "no deviation samples");
  }
  DeviationStats out;
  out.mean_mm = std::accumulate(series_mm.begin(), series_mm.end(), 0.0) /
                static_cast<double>(series_mm.size());
  const auto [lo, hi] = std::minmax_element(series_mm.begin(), series_mm.end());
  out.min_mm = *lo;
  out.max_mm = *hi;
  out.median_mm = median_of(series_mm);
  out.series_mm = std::move(series_mm);
  return out;
}

/// Per-row distance between `p_rcm` and the shaft line reconstructed from the
/// flange pose and calibration.
inline DeviationStats rcm_deviation_series(const EpisodeRecord& episode, const Vec3& p_rcm,
                                           const ShaftCalibration& calib) {
  if (episode.rows.empty()) {
    throw Error(Errc::empty_episode, "episode has no rows");
  }
  std::vector<double> series;
  series.reserve(episode.rows.size());
  for (const EpisodeRow& row : episode.rows) {
    series.push_back(1000.0 * shaft_line_deviation(row.flange, calib, p_rcm));
  }
  return summarize_deviation(std::move(series));
}

/// Tip speed per row from backward differences of recorded tip positions.
/// The first row is taken as rest.
inline TimedSeries tip_speed_series(const EpisodeRecord& episode) {
  if (episode.rows.empty()) {
    throw Error(Errc::empty_episode, "episode has no rows");
  }
  TimedSeries out;
  out.t.reserve(episode.rows.size());
  out.v.reserve(episode.rows.size());
  out.t.push_back(episode.rows.front().time);
  out.v.push_back(0.0);
  for (std::size_t i = 1; i < episode.rows.size(); ++i) {
    const EpisodeRow& a = episode.rows[i - 1];
    const EpisodeRow& b = episode.rows[i];
    out.t.push_back(b.time);
    out.v.push_back((b.tip - a.tip).norm() / (b.time - a.time));
  }
  return out;
}

/// Linear interpolation onto t0 + i / target_hz for every grid point inside
/// the input span.
inline TimedSeries downsample(const TimedSeries& series, double target_hz) {
  if (series.empty()) {
    throw Error(Errc::empty_episode, "cannot downsample an empty series");
  }
  if (!(target_hz > 0.0)) {
    throw Error(Errc::invalid_argument, "target rate must be positive");
  }
  const std::size_t n = series.size();
  if (n == 1) {
    return series;
  }
  const double t0 = series.t.front();
  const double span = series.t.back() - t0;
  const double input_hz = static_cast<double>(n - 1) / span;
  if (input_hz < target_hz * (1.0 - 1e-9)) {
    throw Error(Errc::rate_too_low, "input rate " + std::to_string(input_hz) +
                                        " Hz is below target " + std::to_string(target_hz) + " Hz");
  }
  TimedSeries out;
  const auto count = static_cast<std::size_t>(std::floor(span * target_hz + 1e-9)) + 1;
  out.t.reserve(count);
  out.v.reserve(count);
  std::size_t j = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = t0 + static_cast<double>(i) / target_hz;
    while (j + 2 < n && series.t[j + 1] <= t) {
      ++j;
    }
    const double ta = series.t[j];
    const double tb = series.t[j + 1];
    const double w = std::clamp((t - ta) / (tb - ta), 0.0, 1.0);
    const double value = w == 0.0 ? series.v[j]
                         : w == 1.0 ? series.v[j + 1]
                                    : series.v[j] + w * (series.v[j + 1] - series.v[j]);
    out.t.push_back(t);
    out.v.push_back(value);
  }
  return out;
}

/// Spectral arc length of a uniformly sampled speed profile.
///
/// The magnitude spectrum (zero padded to 2^(ceil(log2 n) + padding_level)
/// bins) is normalized by its peak, restricted to frequencies up to the cutoff
/// (capped at Nyquist), then trimmed to the span between the first and last
/// bins at or above the amplitude threshold. The result is minus the arc
/// length of that curve with frequency normalized to [0, 1].
inline double sparc(const std::vector<double>& speed, double fs, const SparcParams& params = {}) {
  if (speed.size() < 4) {
    throw Error(Errc::series_too_short, "SPARC needs at least 4 samples");
  }
  if (!(fs > 0.0)) {
    throw Error(Errc::invalid_argument, "sample rate must be positive");
  }
  const auto n = static_cast<double>(speed.size());
  const auto nfft = static_cast<std::size_t>(
      std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(n))) + params.padding_level));

  std::vector<double> padded(nfft, 0.0);
  std::copy(speed.begin(), speed.end(), padded.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, padded);

  const double df = fs / static_cast<double>(nfft);
  const double f_max = std::min(params.cutoff_hz, fs / 2.0);
  std::vector<double> mag;
  for (std::size_t k = 0; k <= nfft / 2 && static_cast<double>(k) * df <= f_max; ++k) {
    mag.push_back(std::abs(spectrum[k]));
  }
  double peak = 0.0;
  for (std::size_t k = 0; k <= nfft / 2; ++k) {
    peak = std::max(peak, std::abs(spectrum[k]));
  }
  if (!(peak > 0.0)) {
    throw Error(Errc::all_zero_signal, "speed profile is identically zero");
  }
  for (double& m : mag) {
    m /= peak;
  }

  std::size_t first = mag.size();
  std::size_t last = 0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    if (mag[k] >= params.amp_threshold) {
      first = std::min(first, k);
      last = k;
    }
  }
  if (first >= last) {
    return 0.0;
  }
  const double band = static_cast<double>(last - first) * df;
  double arc = 0.0;
  for (std::size_t k = first + 1; k <= last; ++k) {
    const double dfn = df / band;
    const double dm = mag[k] - mag[k - 1];
    arc += std::sqrt(dfn * dfn + dm * dm);
  }
  return -arc;
}

namespace detail {

/// Central difference in the interior, second-order one-sided at both ends.
inline std::vector<double> central_difference(const std::vector<double>& x, double dt) {
  const std::size_t n = x.size();
  std::vector<double> d(n);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    d[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
  }
  d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
  d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
  return d;
}

}  // namespace detail

/// Log dimensionless jerk of a uniformly sampled speed profile:
///   -ln( T^3 / v_peak^2 * integral(j^2 dt) )
/// with jerk taken as the second derivative of speed.
inline double ldlj(const std::vector<double>& speed, double fs) {
  if (speed.size() < 5) {
    throw Error(Errc::series_too_short, "LDLJ needs at least 5 samples");
  }
  if (!(fs > 0.0)) {
    throw Error(Errc::invalid_argument, "sample rate must be positive");
  }
  double v_peak = 0.0;
  for (double v : speed) {
    v_peak = std::max(v_peak, std::abs(v));
  }
  if (!(v_peak > 0.0)) {
    throw Error(Errc::zero_peak_speed, "peak speed is zero");
  }
  const double dt = 1.0 / fs;
  const double duration = static_cast<double>(speed.size() - 1) * dt;
  const std::vector<double> jerk =
      detail::central_difference(detail::central_difference(speed, dt), dt);
  double integral = 0.0;
  for (std::size_t i = 1; i < jerk.size(); ++i) {
    integral += 0.5 * (jerk[i - 1] * jerk[i - 1] + jerk[i] * jerk[i]) * dt;
  }
  const double dimensionless = std::pow(duration, 3) / (v_peak * v_peak) * integral;
  return -std::log(dimensionless);
}

/// Tip-speed smoothness of an episode, optionally at the raw control rate.
inline SmoothnessResult episode_smoothness(const EpisodeRecord& episode, double fs = 5.0,
                                           bool raw_rate = false, const SparcParams& params = {}) {
  const TimedSeries speed = tip_speed_series(episode);
  SmoothnessResult out;
  if (raw_rate) {
    out.sample_rate_hz = 1.0 / episode.header.dt;
    out.samples = speed.size();
    out.sparc = sparc(speed.v, out.sample_rate_hz, params);
    out.ldlj = ldlj(speed.v, out.sample_rate_hz);
    return out;
  }
  const TimedSeries resampled = downsample(speed, fs);
  out.sample_rate_hz = fs;
  out.samples = resampled.size();
  out.sparc = sparc(resampled.v, fs, params);
  out.ldlj = ldlj(resampled.v, fs);
  return out;
}

}  // namespace rcm
