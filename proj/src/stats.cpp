#include "cwr/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cwr {

double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) {
    // Series: P(a,x) = x^a e^-x / Gamma(a) * sum_k x^k / (a(a+1)...(a+k))
    double term = 1.0 / a;
    double sum = term;
    for (int k = 1; k < 500; ++k) {
      term *= x / (a + k);
      sum += term;
      if (term < sum * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // Lentz continued fraction for Q(a,x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int k = 1; k < 500; ++k) {
    const double an = -static_cast<double>(k) * (k - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  const double q = h * std::exp(-x + a * std::log(x) - std::lgamma(a));
  return 1.0 - q;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("normal_quantile requires p in (0,1)");
  }
  // Acklam's coefficients.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement against the exact CDF.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double gamma_quantile(double p, double shape, double rate) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("gamma_quantile requires p in (0,1)");
  }
  // Wilson-Hilferty start.
  const double z = normal_quantile(p);
  const double t = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * std::sqrt(shape));
  double x = shape * t * t * t;
  if (x <= 0.0) {
    x = std::exp((std::log(p) + std::lgamma(shape) + std::log(shape)) / shape);
  }
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 64; ++it) {
    const double f = gamma_p(shape, x) - p;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double logpdf = (shape - 1.0) * std::log(x) - x - std::lgamma(shape);
    double step = f / std::exp(logpdf);
    double next = x - step;
    if (!(next > lo && (next < hi))) {
      next = std::isinf(hi) ? 2.0 * x : 0.5 * (lo + hi);
    }
    if (std::abs(next - x) < 1e-12 * (1.0 + x)) {
      x = next;
      break;
    }
    x = next;
  }
  return x / rate;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double skewness(std::span<const double> v) {
  const double m = mean(v);
  double m2 = 0.0, m3 = 0.0;
  for (double x : v) {
    const double d = x - m;
    m2 += d * d;
    m3 += d * d * d;
  }
  const double n = static_cast<double>(v.size());
  m2 /= n;
  m3 /= n;
  return m3 / std::pow(m2, 1.5);
}

double excess_kurtosis(std::span<const double> v) {
  const double m = mean(v);
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = x - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(v.size());
  m2 /= n;
  m4 /= n;
  return m4 / (m2 * m2) - 3.0;
}

double anova_icc(std::span<const double> values, std::size_t groups,
                 std::size_t per_group) {
  const double n0 = static_cast<double>(per_group);
  const double overall = mean(values);
  double ssb = 0.0, ssw = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::span<const double> block = values.subspan(g * per_group, per_group);
    const double gm = mean(block);
    ssb += n0 * (gm - overall) * (gm - overall);
    for (double x : block) ssw += (x - gm) * (x - gm);
  }
  const double msb = ssb / static_cast<double>(groups - 1);
  const double msw = ssw / static_cast<double>(groups * (per_group - 1));
  return (msb - msw) / (msb + (n0 - 1.0) * msw);
}

}  // namespace cwr
