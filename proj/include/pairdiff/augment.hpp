#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/codec.hpp"
#include "pairdiff/datagen.hpp"
#include "pairdiff/rng.hpp"

namespace pairdiff::augment {

enum class Origin : uint8_t { Real = 0, Synthetic = 1 };

struct ResamplePlan {
  int R = 0;  // synthetic pairs added per real pair
  bool balance = false;
  uint64_t seed = 0;  // epoch ordering seed for downstream training
};

struct TrainingSet {
  int K = 0;
  ResamplePlan plan;
  std::vector<LabeledPair> pairs;
  std::vector<Origin> origin;  // parallel to pairs

  size_t count(Origin o) const;
};

/// Real entries first (each duplicated R times when balance is on and R >= 1),
/// then the first R*|real| synthetic pairs in pool order.
TrainingSet build_training_set(const datagen::Corpus& real, const datagen::Corpus& synthetic,
                               const ResamplePlan& plan);

/// Draw order: side = uniform_int(max_side+1) with
/// max_side = floor(max_frac * min(H, W)), then y0 = uniform_int(H-side+1),
/// x0 = uniform_int(W-side+1). A zero side leaves the pair unchanged.
LabeledPair cutout(const LabeledPair& pair, RngStream& rng, double max_frac = 0.5);
/// Square [y0, y0+side) x [x0, x0+side): image to 0.5, mask to the ignore
/// index.
LabeledPair cutout_at(const LabeledPair& pair, int y0, int x0, int side);

/// Draw order: h = uniform_int(H+1), w = uniform_int(W+1), then if both are
/// positive y0 = uniform_int(H-h+1), x0 = uniform_int(W-w+1).
LabeledPair cutmix(const LabeledPair& a, const LabeledPair& b, RngStream& rng);
/// Rectangle [y0, y0+h) x [x0, x0+w) of b pasted into a.
LabeledPair cutmix_at(const LabeledPair& a, const LabeledPair& b, int y0, int x0, int h, int w);

/// Maximal components of class cls, each a sorted list of y*W+x indices,
/// ordered by first (smallest) pixel. Connectivity is 4 or 8.
std::vector<std::vector<int>> connected_components(const std::vector<uint8_t>& mask, int H, int W,
                                                   int cls, int connectivity = 4);

struct CopyPasteResult {
  LabeledPair pair;
  bool pasted = false;
};

/// Components of b over the foreground classes (enumerated in ascending class
/// order) are counted; one is chosen by uniform_int and pasted at its original
/// location. No foreground in b returns a unchanged with pasted = false.
CopyPasteResult copy_paste(const LabeledPair& a, const LabeledPair& b, RngStream& rng,
                           const std::vector<int>& foreground);

/// Writes <base>.real.satp, <base>.synth.satp, and <base>.manifest.
void save_training_set(const TrainingSet& ts, const std::string& base_path);
TrainingSet load_training_set(const std::string& base_path);

}  // namespace pairdiff::augment
