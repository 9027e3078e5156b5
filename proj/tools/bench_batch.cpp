// SPDX-License-Identifier: Apache-2.0
//
// Compares serial and OpenMP batch-gradient computation on a synthetic
// batch: wall time for each, plus a max-difference check on the gradients
// (the ordered reduction makes them identical regardless of thread count).

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "labes/model.hpp"
#include "labes/synth.hpp"
#include "labes/training.hpp"

using namespace labes;

int main(int argc, char** argv) {
  int dialogs = 32;
  int threads = 0;  // 0 = OpenMP default
  if (argc > 1) dialogs = std::atoi(argv[1]);
  if (argc > 2) threads = std::atoi(argv[2]);
#ifdef _OPENMP
  if (threads <= 0) threads = omp_get_max_threads();
#else
  if (threads <= 0) threads = 1;
#endif

  SynthSpec spec;
  spec.dialogs = dialogs;
  SynthData data = generate(spec);

  ModelConfig mcfg;
  mcfg.hidden = 32;
  mcfg.embedding = 24;
  mcfg.dropout = 0.0;
  Vocabulary vocab = Vocabulary::build(data.corpus, data.schema, 400);
  LabesModel model(mcfg, data.schema, vocab, 1);

  std::vector<const Dialog*> batch;
  for (const Dialog& d : data.corpus.dialogs) batch.push_back(&d);
  std::span<const Dialog* const> sp(batch.data(), batch.size());

  auto timed = [&](int n_threads, GradBuffer& grads) {
    const auto t0 = std::chrono::steady_clock::now();
    LossStats s = j_sup(model, sp, data.db, &grads, 7, n_threads);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    return std::make_pair(s.loss, ms);
  };

  GradBuffer g_serial(model.params()), g_parallel(model.params());
  auto [loss1, ms1] = timed(1, g_serial);
  auto [lossN, msN] = timed(threads, g_parallel);

  double max_diff = 0.0;
  for (int i = 0; i < model.params().count(); ++i) {
    const double d =
        (g_serial[i] - g_parallel[i]).array().abs().maxCoeff();
    max_diff = std::max(max_diff, d);
  }

  std::printf("dialogs %d\n", dialogs);
  std::printf("serial      loss %.6f  %.1f ms\n", loss1, ms1);
  std::printf("%d threads   loss %.6f  %.1f ms  speedup %.2fx\n", threads,
              lossN, msN, ms1 / msN);
  std::printf("max gradient difference %.3e %s\n", max_diff,
              max_diff == 0.0 ? "(bitwise identical)" : "");
  return max_diff == 0.0 && loss1 == lossN ? 0 : 1;
}
