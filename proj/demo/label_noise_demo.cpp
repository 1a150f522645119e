// Scores a synthetic dataset with flipped labels, then shows where the
// flipped samples land in the AUM ranking and what CCS keeps.

#include <cstdio>

#include "cbcs/cbcs.hpp"

int main() {
  using namespace cbcs;

  auto spec = bench::separable_noisy_spec();
  spec.seed = 42;
  const auto prepared = bench::prepare(spec);

  ScoreOptions options;
  const auto scored =
      score_dataset(prepared.train_visual, prepared.bottleneck.concept_matrix, prepared.train_labels, options);

  std::printf("samples: %zu, concepts in bottleneck: %zu\n", prepared.train_visual.rows(),
              prepared.bottleneck.concept_matrix.rows());
  std::printf("separation AUC (clean above flipped): %.4f\n",
              bench::separation_auc(scored.table, prepared.train_flipped));
  for (double beta : {0.05, 0.1, 0.2, 0.3}) {
    std::printf("flipped labels among the %4.0f%% hardest: %.3f\n", beta * 100.0,
                bench::mislabeled_capture_rate(scored.table, prepared.train_flipped, beta));
  }

  SelectionSpec selection;
  selection.alpha = 0.9;
  selection.beta = lookup_cutoff(CutoffTable::builtin(), "cifar10", 0.9, SelectionMode::Labeled);
  selection.seed = 1;
  CcsTrace trace;
  const auto coreset = ccs_select(scored.table, selection, &trace);
  std::size_t flipped_kept = 0;
  for (auto i : coreset.indices) flipped_kept += prepared.train_flipped[i] ? 1 : 0;
  std::printf("coreset: %zu samples from %zu bins, %zu flipped\n", coreset.size(), trace.visit_order.size(),
              flipped_kept);
  return 0;
}
