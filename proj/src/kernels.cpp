#include "treeperturb/kernels.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace treeperturb::kern {

namespace serial {

void matvec(const Mat& m, const double* x, double* y) {
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_t(const Mat& m, const double* x, double* y) {
  // Column-wise accumulation keeps the per-output summation order fixed
  // (row 0 first), which the parallel variant reproduces.
  for (int c = 0; c < m.cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < m.rows; ++r) acc += m.at(r, c) * x[r];
    y[c] = acc;
  }
}

void softmax(const double* x, int n, double tau, double* out) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp((x[i] - mx) / tau);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
}

void weighted_rowsum(const Mat& m, const double* w, double* out) {
  for (int c = 0; c < m.cols; ++c) out[c] = 0.0;
  for (int r = 0; r < m.rows; ++r) {
    const double wr = w[r];
    if (wr == 0.0) continue;
    const double* row = m.row(r);
    for (int c = 0; c < m.cols; ++c) out[c] += wr * row[c];
  }
}

void cosine_scan(const Mat& m, const double* q, double* sims) {
  double qn = 0.0;
  for (int c = 0; c < m.cols; ++c) qn += q[c] * q[c];
  qn = std::sqrt(qn);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double dot = 0.0, rn = 0.0;
    for (int c = 0; c < m.cols; ++c) {
      dot += row[c] * q[c];
      rn += row[c] * row[c];
    }
    rn = std::sqrt(rn);
    sims[r] = (qn == 0.0 || rn == 0.0) ? -1.0 : dot / (qn * rn);
  }
}

}  // namespace serial

namespace par {

void matvec(const Mat& m, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_t(const Mat& m, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < m.cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < m.rows; ++r) acc += m.at(r, c) * x[r];
    y[c] = acc;
  }
}

void softmax(const double* x, int n, double tau, double* out) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = std::exp((x[i] - mx) / tau);
  for (int i = 0; i < n; ++i) z += out[i];
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] /= z;
}

void weighted_rowsum(const Mat& m, const double* w, double* out) {
  // Parallel over output columns; each column walks rows in the same
  // order as the serial kernel.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < m.cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < m.rows; ++r) {
      if (w[r] == 0.0) continue;
      acc += w[r] * m.at(r, c);
    }
    out[c] = acc;
  }
}

void cosine_scan(const Mat& m, const double* q, double* sims) {
  double qn = 0.0;
  for (int c = 0; c < m.cols; ++c) qn += q[c] * q[c];
  qn = std::sqrt(qn);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double dot = 0.0, rn = 0.0;
    for (int c = 0; c < m.cols; ++c) {
      dot += row[c] * q[c];
      rn += row[c] * row[c];
    }
    rn = std::sqrt(rn);
    sims[r] = (qn == 0.0 || rn == 0.0) ? -1.0 : dot / (qn * rn);
  }
}

}  // namespace par

namespace {
std::atomic<bool> g_parallel{true};
// Below this many output elements the parallel-for overhead dominates.
constexpr int kParThreshold = 128;

inline bool use_par(int n) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && n >= kParThreshold &&
         omp_get_level() == 0 && omp_get_max_threads() > 1;
#else
  (void)n;
  return false;
#endif
}
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matvec(const Mat& m, const double* x, double* y) {
  if (use_par(m.rows))
    par::matvec(m, x, y);
  else
    serial::matvec(m, x, y);
}

void matvec_t(const Mat& m, const double* x, double* y) {
  if (use_par(m.cols))
    par::matvec_t(m, x, y);
  else
    serial::matvec_t(m, x, y);
}

void softmax(const double* x, int n, double tau, double* out) {
  if (use_par(n))
    par::softmax(x, n, tau, out);
  else
    serial::softmax(x, n, tau, out);
}

void weighted_rowsum(const Mat& m, const double* w, double* out) {
  if (use_par(m.cols))
    par::weighted_rowsum(m, w, out);
  else
    serial::weighted_rowsum(m, w, out);
}

void cosine_scan(const Mat& m, const double* q, double* sims) {
  if (use_par(m.rows))
    par::cosine_scan(m, q, sims);
  else
    serial::cosine_scan(m, q, sims);
}

}  // namespace treeperturb::kern
