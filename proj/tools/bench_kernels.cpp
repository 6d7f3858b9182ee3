// Compares the serial reference kernels with the OpenMP variants and
// checks that both produce bitwise-identical output.

#include <cstdio>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "treeperturb/kernels.hpp"

namespace tp = treeperturb;
namespace kern = treeperturb::kern;

namespace {

double now() {
#ifdef _OPENMP
  return omp_get_wtime();
#else
  return double(clock()) / CLOCKS_PER_SEC;
#endif
}

tp::Mat random_mat(int r, int c, std::mt19937_64& rng) {
  tp::Mat m(r, c);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& x : m.a) x = u(rng);
  return m;
}

tp::Vec random_vec(int n, std::mt19937_64& rng) {
  tp::Vec v(size_t(n), 0.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& x : v) x = u(rng);
  return v;
}

template <typename F>
double time_loop(F&& f, int reps) {
  f();  // warm up
  const double t0 = now();
  for (int i = 0; i < reps; ++i) f();
  return (now() - t0) / reps * 1e6;  // microseconds
}

void bench_size(int rows, int cols, int reps) {
  std::mt19937_64 rng(7);
  const tp::Mat m = random_mat(rows, cols, rng);
  const tp::Vec x = random_vec(cols, rng);
  const tp::Vec xt = random_vec(rows, rng);
  tp::Vec y_serial(size_t(rows), 0.0), y_par(size_t(rows), 0.0);
  tp::Vec yt_serial(size_t(cols), 0.0), yt_par(size_t(cols), 0.0);
  tp::Vec sims_serial(size_t(rows), 0.0), sims_par(size_t(rows), 0.0);

  const double t_mv_s = time_loop([&] { kern::serial::matvec(m, x.data(), y_serial.data()); }, reps);
  const double t_mv_p = time_loop([&] { kern::par::matvec(m, x.data(), y_par.data()); }, reps);
  const double t_mt_s =
      time_loop([&] { kern::serial::matvec_t(m, xt.data(), yt_serial.data()); }, reps);
  const double t_mt_p = time_loop([&] { kern::par::matvec_t(m, xt.data(), yt_par.data()); }, reps);
  const double t_cs_s =
      time_loop([&] { kern::serial::cosine_scan(m, m.row(0), sims_serial.data()); }, reps);
  const double t_cs_p =
      time_loop([&] { kern::par::cosine_scan(m, m.row(0), sims_par.data()); }, reps);

  bool exact = y_serial == y_par && yt_serial == yt_par && sims_serial == sims_par;
  std::printf("%6dx%-6d matvec %9.2fus/%9.2fus (x%.2f)  matvec_t %9.2fus/%9.2fus (x%.2f)  "
              "cosine %9.2fus/%9.2fus (x%.2f)  bitwise=%s\n",
              rows, cols, t_mv_s, t_mv_p, t_mv_s / t_mv_p, t_mt_s, t_mt_p, t_mt_s / t_mt_p,
              t_cs_s, t_cs_p, t_cs_s / t_cs_p, exact ? "yes" : "NO");
}

}  // namespace

int main() {
  std::printf("threads: %d (serial / parallel, speedup)\n", kern::max_threads());
  bench_size(256, 64, 2000);
  bench_size(1024, 300, 500);
  bench_size(4096, 300, 200);
  bench_size(16384, 300, 50);
  return 0;
}
