#include "attnchain/dense_eigen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attnchain/error.hpp"

namespace attnchain::dense {
namespace {

class RowMajor {
 public:
  RowMajor(std::size_t n, std::span<double> a) : n_(n), a_(a) {}
  double& operator()(std::ptrdiff_t i, std::ptrdiff_t j) const {
    return a_[static_cast<std::size_t>(i) * n_ + static_cast<std::size_t>(j)];
  }

 private:
  std::size_t n_;
  std::span<double> a_;
};

double copysign_of(double magnitude, double sign) {
  return sign >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude);
}

}  // namespace

void hessenberg_reduce(std::size_t n, std::span<double> a) {
  RowMajor h(n, a);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  std::vector<double> ort(n, 0.0);
  for (std::ptrdiff_t m = 1; m < sn - 1; ++m) {
    double scale = 0.0;
    for (std::ptrdiff_t i = m; i < sn; ++i) scale += std::abs(h(i, m - 1));
    if (scale == 0.0) continue;

    double norm2 = 0.0;
    for (std::ptrdiff_t i = sn - 1; i >= m; --i) {
      ort[i] = h(i, m - 1) / scale;
      norm2 += ort[i] * ort[i];
    }
    double g = std::sqrt(norm2);
    if (ort[m] > 0.0) g = -g;
    norm2 -= ort[m] * g;
    ort[m] -= g;

    // H <- (I - u u^T / norm2) H (I - u u^T / norm2)
    for (std::ptrdiff_t j = m; j < sn; ++j) {
      double f = 0.0;
      for (std::ptrdiff_t i = sn - 1; i >= m; --i) f += ort[i] * h(i, j);
      f /= norm2;
      for (std::ptrdiff_t i = m; i < sn; ++i) h(i, j) -= f * ort[i];
    }
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
      double f = 0.0;
      for (std::ptrdiff_t j = sn - 1; j >= m; --j) f += ort[j] * h(i, j);
      f /= norm2;
      for (std::ptrdiff_t j = m; j < sn; ++j) h(i, j) -= f * ort[j];
    }
    h(m, m - 1) = scale * g;
    for (std::ptrdiff_t i = m + 1; i < sn; ++i) h(i, m - 1) = 0.0;
  }
}

std::vector<std::complex<double>> hessenberg_eigenvalues(std::size_t n,
                                                         std::span<double> hs) {
  RowMajor a(n, hs);
  const double eps = std::numeric_limits<double>::epsilon();
  std::vector<std::complex<double>> w(n);
  const auto sn = static_cast<std::ptrdiff_t>(n);

  double anorm = 0.0;
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(i - 1, 0); j < sn; ++j) {
      anorm += std::abs(a(i, j));
    }
  }
  // Absolute deflation floor. Without it a block whose entries are all far
  // below the matrix norm (low-rank chains leave such blocks behind) never
  // passes the neighbour-relative test.
  const double floor = std::max(anorm * eps * eps, std::numeric_limits<double>::min());

  // Sweep budget per deflation, as in LAPACK's dlahqr.
  const int max_its = 30 * static_cast<int>(std::max<std::size_t>(10, n));
  std::ptrdiff_t nn = sn - 1;
  double t = 0.0;  // accumulated exceptional shifts
  while (nn >= 0) {
    int its = 0;
    std::ptrdiff_t l = 0;
    do {
      // Look for a single small subdiagonal element.
      for (l = nn; l > 0; --l) {
        double s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(a(l, l - 1)) <= std::max(eps * s, floor)) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      double x = a(nn, nn);
      if (l == nn) {
        w[nn--] = x + t;
      } else {
        double y = a(nn - 1, nn - 1);
        double ww = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          // Trailing 2x2 block.
          const double p = 0.5 * (y - x);
          const double q = p * p + ww;
          double z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + copysign_of(z, p);
            w[nn - 1] = w[nn] = x + z;
            if (z != 0.0) w[nn] = x - ww / z;
          } else {
            w[nn] = {x + p, -z};
            w[nn - 1] = std::conj(w[nn]);
          }
          nn -= 2;
        } else {
          if (its == max_its) {
            fail(ErrorCode::kConvergenceFailure,
                 "QR iteration did not deflate eigenvalue " + std::to_string(nn));
          }
          if (its % 10 == 0 && its > 0) {
            // Exceptional shift.
            t += x;
            for (std::ptrdiff_t i = 0; i <= nn; ++i) a(i, i) -= x;
            const double s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            ww = -0.4375 * s * s;
          }
          ++its;

          double p = 0.0, q = 0.0, r = 0.0, z = 0.0;
          std::ptrdiff_t m = nn - 2;
          for (; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            double s = y - z;
            p = (r * s - ww) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
            const double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) +
                                            std::abs(a(m + 1, m + 1)));
            if (u <= eps * v) break;
          }
          for (std::ptrdiff_t i = m; i < nn - 1; ++i) {
            a(i + 2, i) = 0.0;
            if (i != m) a(i + 2, i - 1) = 0.0;
          }
          // Double-shift QR sweep on rows/columns l..nn.
          for (std::ptrdiff_t k = m; k < nn; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = 0.0;
              if (k + 1 != nn) r = a(k + 2, k - 1);
              x = std::abs(p) + std::abs(q) + std::abs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            const double s = copysign_of(std::sqrt(p * p + q * q + r * r), p);
            if (s == 0.0) continue;
            if (k == m) {
              if (l != m) a(k, k - 1) = -a(k, k - 1);
            } else {
              a(k, k - 1) = -s * x;
            }
            p += s;
            x = p / s;
            y = q / s;
            z = r / s;
            q /= p;
            r /= p;
            for (std::ptrdiff_t j = k; j <= nn; ++j) {
              p = a(k, j) + q * a(k + 1, j);
              if (k + 1 != nn) {
                p += r * a(k + 2, j);
                a(k + 2, j) -= p * z;
              }
              a(k + 1, j) -= p * y;
              a(k, j) -= p * x;
            }
            const std::ptrdiff_t mmin = nn < k + 3 ? nn : k + 3;
            for (std::ptrdiff_t i = l; i <= mmin; ++i) {
              p = x * a(i, k) + y * a(i, k + 1);
              if (k + 1 != nn) {
                p += z * a(i, k + 2);
                a(i, k + 2) -= p * r;
              }
              a(i, k + 1) -= p * q;
              a(i, k) -= p;
            }
          }
        }
      }
    } while (l + 1 < nn);
  }
  return w;
}

std::vector<std::complex<double>> eigenvalues(std::size_t n,
                                              std::span<const double> a) {
  for (double x : a) {
    if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "matrix entry");
  }
  std::vector<double> h(a.begin(), a.end());
  hessenberg_reduce(n, h);
  auto w = hessenberg_eigenvalues(n, h);
  std::stable_sort(w.begin(), w.end(),
                   [](const std::complex<double>& x, const std::complex<double>& y) {
                     return std::abs(x) > std::abs(y);
                   });
  return w;
}

std::vector<double> solve(std::size_t n, std::vector<double> a,
                          std::vector<double> b) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    }
    if (a[piv * n + k] == 0.0) {
      fail(ErrorCode::kConvergenceFailure, "singular system");
    }
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k * n + j] * x[j];
    x[k] = s / a[k * n + k];
  }
  return x;
}

}  // namespace attnchain::dense
