#pragma once

#include "treeperturb/common.hpp"

namespace treeperturb::kern {

// Serial reference implementations. These are the ground truth the
// OpenMP variants are tested against; keep them branch-free and simple.
namespace serial {
void matvec(const Mat& m, const double* x, double* y);
void matvec_t(const Mat& m, const double* x, double* y);
void softmax(const double* x, int n, double tau, double* out);
void weighted_rowsum(const Mat& m, const double* w, double* out);
void cosine_scan(const Mat& m, const double* q, double* sims);
}  // namespace serial

namespace par {
void matvec(const Mat& m, const double* x, double* y);
void matvec_t(const Mat& m, const double* x, double* y);
void softmax(const double* x, int n, double tau, double* out);
void weighted_rowsum(const Mat& m, const double* w, double* out);
void cosine_scan(const Mat& m, const double* q, double* sims);
}  // namespace par

bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

// Dispatching entry points. Parallelism only splits independent output
// elements across threads, so results are bitwise identical to serial.

// y = M x
void matvec(const Mat& m, const double* x, double* y);
// y = M^T x  (x has m.rows entries, y has m.cols)
void matvec_t(const Mat& m, const double* x, double* y);
// out = softmax(x / tau), stable under extreme tau
void softmax(const double* x, int n, double tau, double* out);
// out[j] = sum_i w[i] * m(i, j), skipping exact-zero weights
void weighted_rowsum(const Mat& m, const double* w, double* out);
// sims[i] = cosine(q, m.row(i)); rows or queries with zero norm get -1
void cosine_scan(const Mat& m, const double* q, double* sims);

}  // namespace treeperturb::kern
