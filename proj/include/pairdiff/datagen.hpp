#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/codec.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::datagen {

struct BackgroundSpec {
  double fraction = 0.0;
  float r = 0.f, g = 0.f, b = 0.f;
  float jitter = 0.f;
};

struct ObjectSpec {
  int cls = 0;
  bool disc = false;               // else axis-aligned square
  int min_size = 1, max_size = 1;  // half-extent (square) or radius (disc)
  int count = 1;                   // instances per image when present
  double present_prob = 1.0;
  int host = -1;  // background class the object co-occurs with, -1 = none
  double host_prob = 0.0;
  float r = 0.f, g = 0.f, b = 0.f;
  float jitter = 0.f;
};

/// Background classes are 0..B-1 in noise-value order; object classes are
/// B..K-1. Per-image background fractions are exact by quantile construction,
/// so expected_frequencies() is analytic, not estimated.
struct SceneSpec {
  int K = 0;
  int height = 64, width = 64;
  int cell = 8;  // value-noise lattice cell in pixels
  std::vector<BackgroundSpec> background;
  std::vector<ObjectSpec> objects;

  static SceneSpec default_spec();
  void validate() const;
  std::vector<double> expected_frequencies() const;
  /// Per objects[] entry: probability an instance is host-constrained.
  std::vector<double> expected_cooccurrence() const;
};

struct Corpus {
  int K = 0;
  uint64_t seed = 0;
  /// Generating config echo; empty for corpora loaded from disk (the dataset
  /// file format carries only K).
  std::string spec_text;
  std::vector<LabeledPair> pairs;
};

/// Deterministic per (spec, seed); scene i uses the derived stream i.
Corpus gen_corpus(const SceneSpec& spec, int n, uint64_t seed);

/// Non-overlapping tiles in row-major order; trailing remainders dropped.
std::vector<LabeledPair> extract_patches(const nd::Tensor& image,
                                                const std::vector<uint8_t>& mask, int patch);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

/// 2x downsample: image by 2x2 mean, mask by top-left nearest.
LabeledPair downsample2(const LabeledPair& pair);

SceneSpec parse_scene_spec(const std::string& text);
std::string format_scene_spec(const SceneSpec& spec);

}  // namespace pairdiff::datagen
