#include "ctf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "ctf/error.hpp"

namespace ctf::spectral {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<Complex> fft_complex(std::vector<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0) throw ContractError("fft: empty input");
  if (!is_power_of_two(n)) throw ContractError("fft_complex: length must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles evaluated directly rather than by recurrence keep the error
      // at a few ulps even for n = 2^16.
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(len);
      const Complex w(std::cos(ang), std::sin(ang));
      for (std::size_t i = 0; i < n; i += len) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  return a;
}

std::vector<Complex> fft(std::span<const double> x) {
  if (x.empty()) throw ContractError("fft: empty input");
  std::vector<Complex> a(next_power_of_two(x.size()), Complex(0.0, 0.0));
  std::copy(x.begin(), x.end(), a.begin());
  return fft_complex(std::move(a), false);
}

std::vector<Complex> ifft(std::vector<Complex> spectrum) {
  const double n = static_cast<double>(spectrum.size());
  auto out = fft_complex(std::move(spectrum), true);
  for (auto& v : out) v /= n;
  return out;
}

std::vector<Complex> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw ContractError("naive_dft: empty input");
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays in [0, 2pi).
      const std::size_t kt = (k * t) % n;
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(kt) /
                         static_cast<double>(n);
      acc += x[t] * Complex(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

std::vector<Complex> exact_dft(std::span<const double> x) {
  return is_power_of_two(x.size()) ? fft(x) : naive_dft(x);
}

std::vector<double> zero_centered(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (out.empty()) return out;
  double mu = 0.0;
  for (double v : out) mu += v;
  mu /= static_cast<double>(out.size());
  for (double& v : out) v -= mu;
  return out;
}

AmplitudeSpectrum amplitude_spectrum(std::span<const double> x, double sample_rate) {
  auto X = exact_dft(x);
  AmplitudeSpectrum s;
  s.n = x.size();
  s.sample_rate = sample_rate;
  s.amplitudes.resize(s.n / 2 + 1);
  for (std::size_t k = 0; k < s.amplitudes.size(); ++k) s.amplitudes[k] = std::abs(X[k]);
  return s;
}

std::optional<std::size_t> argmax_bin(const AmplitudeSpectrum& spectrum) {
  const auto& a = spectrum.amplitudes;
  if (a.size() < 2) return std::nullopt;
  std::size_t best = 1;
  for (std::size_t k = 2; k < a.size(); ++k)
    if (a[k] > a[best]) best = k;
  // Numerically empty spectrum (constant input after centering).
  double total = 0.0;
  for (std::size_t k = 1; k < a.size(); ++k) total += a[k];
  if (!(a[best] > 1e-12 * std::max(1.0, total)) ) return std::nullopt;
  return best;
}

std::optional<std::size_t> dominant_bin(const AmplitudeSpectrum& spectrum, double kappa) {
  auto best = argmax_bin(spectrum);
  if (!best) return std::nullopt;
  const auto& a = spectrum.amplitudes;
  const std::size_t others = a.size() - 2;
  if (others == 0) return best;
  double rest = 0.0;
  for (std::size_t k = 1; k < a.size(); ++k)
    if (k != *best) rest += a[k];
  const double rest_mean = rest / static_cast<double>(others);
  if (a[*best] >= kappa * rest_mean) return best;
  return std::nullopt;
}

std::optional<std::size_t> dominant_frequency(std::span<const double> x, double kappa) {
  if (x.empty()) throw ContractError("dominant_frequency: empty input");
  auto centered = zero_centered(x);
  return dominant_bin(amplitude_spectrum(centered), kappa);
}

double band_rmse(const AmplitudeSpectrum& pred, const AmplitudeSpectrum& truth, Band band) {
  if (pred.n != truth.n || pred.sample_rate != truth.sample_rate ||
      pred.amplitudes.size() != truth.amplitudes.size()) {
    throw ContractError("band_rmse: spectra differ in length or sample rate");
  }
  const bool closed = band.hi >= truth.nyquist();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < truth.amplitudes.size(); ++k) {
    const double f = truth.frequency(k);
    const bool in = f >= band.lo && (f < band.hi || (closed && f <= band.hi));
    if (!in) continue;
    const double d = pred.amplitudes[k] - truth.amplitudes[k];
    acc += d * d;
    ++count;
  }
  if (count == 0) {
    throw ContractError("band_rmse: band [" + std::to_string(band.lo) + ", " +
                        std::to_string(band.hi) + ") contains no bins");
  }
  return std::sqrt(acc / static_cast<double>(count));
}

double wrap_phase(double phi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  phi = std::fmod(phi, two_pi);
  if (phi <= -std::numbers::pi) phi += two_pi;
  if (phi > std::numbers::pi) phi -= two_pi;
  return phi;
}

std::vector<double> subsample_and_interpolate(std::span<const double> x, std::size_t r) {
  if (r == 0) throw ContractError("subsample_and_interpolate: factor must be >= 1");
  if (x.empty() || x.size() % r != 0) {
    throw ContractError("subsample_and_interpolate: factor " + std::to_string(r) +
                        " does not divide length " + std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  const std::size_t last = n - r;
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (t >= last) {
      out[t] = x[last];
      continue;
    }
    const std::size_t left = (t / r) * r;
    const double w = static_cast<double>(t - left) / static_cast<double>(r);
    out[t] = (1.0 - w) * x[left] + w * x[left + r];
  }
  return out;
}

DistortionReport interp_distortion_report(std::span<const double> x, std::size_t r) {
  if (r < 1) throw ContractError("interp_distortion_report: factor must be >= 1");
  if (x.empty() || x.size() % r != 0) {
    throw ContractError("interp_distortion_report: factor " + std::to_string(r) +
                        " does not divide length " + std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  auto interp = subsample_and_interpolate(x, r);
  auto X = exact_dft(x);
  auto Xi = exact_dft(interp);

  DistortionReport rep;
  rep.n = n;
  rep.factor = r;
  const std::size_t bins = n / 2 + 1;
  double peak = 0.0;
  for (std::size_t k = 0; k < bins; ++k) peak = std::max(peak, std::abs(X[k]));
  const double empty = 1e-12 * std::max(1.0, peak);
  for (std::size_t k = 0; k < bins; ++k) {
    const double a = std::abs(X[k]);
    const double ai = std::abs(Xi[k]);
    rep.original_amplitude.push_back(a);
    rep.interpolated_amplitude.push_back(ai);
    if (a <= empty) {
      rep.attenuation.push_back(ai <= empty ? 1.0 : std::numeric_limits<double>::infinity());
      rep.phase_delay.push_back(0.0);
    } else {
      rep.attenuation.push_back(ai / a);
      rep.phase_delay.push_back(ai <= empty ? 0.0 : wrap_phase(std::arg(Xi[k]) - std::arg(X[k])));
    }
    // sinc^2 of the normalized frequency times r (triangle kernel of half-width r).
    const double u = static_cast<double>(k) * static_cast<double>(r) / static_cast<double>(n);
    const double s = u == 0.0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
    rep.sinc2_reference.push_back(s * s);
  }
  return rep;
}

}  // namespace ctf::spectral
