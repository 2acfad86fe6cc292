#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <queue>
#include <set>

#include "doctest.h"
#include "pairdiff/datagen.hpp"

using namespace pairdiff;
using namespace pairdiff::datagen;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/pairdiff_test_") + name; }

bool pairs_bitwise_equal(const LabeledPair& a, const LabeledPair& b) {
  return a.image.shape == b.image.shape && a.mask == b.mask &&
         std::memcmp(a.image.data.data(), b.image.data.data(),
                     a.image.data.size() * sizeof(float)) == 0;
}

// independent 4-connected component finder for the co-occurrence oracle
std::vector<std::vector<int>> components_of(const std::vector<uint8_t>& mask, int H, int W,
                                            uint8_t cls) {
  std::vector<char> seen(mask.size(), 0);
  std::vector<std::vector<int>> comps;
  for (int start = 0; start < H * W; ++start) {
    if (mask[(size_t)start] != cls || seen[(size_t)start]) continue;
    std::vector<int> comp;
    std::queue<int> q;
    q.push(start);
    seen[(size_t)start] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      comp.push_back(p);
      const int y = p / W, x = p % W;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int i = 0; i < 4; ++i) {
        if (ny[i] < 0 || ny[i] >= H || nx[i] < 0 || nx[i] >= W) continue;
        const int np = ny[i] * W + nx[i];
        if (mask[(size_t)np] == cls && !seen[(size_t)np]) {
          seen[(size_t)np] = 1;
          q.push(np);
        }
      }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

// modal background class over the 8-neighborhood border of a component;
// object-class pixels do not vote, ties go to the smaller class
int ring_modal_background(const std::vector<uint8_t>& mask, int H, int W,
                          const std::vector<int>& comp, int num_bg) {
  std::set<int> body(comp.begin(), comp.end());
  std::map<int, int> votes;
  for (int p : comp) {
    const int y = p / W, x = p % W;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        const int np = yy * W + xx;
        if (body.count(np)) continue;
        if (mask[(size_t)np] < num_bg) ++votes[mask[(size_t)np]];
      }
    }
  }
  int best = -1, best_count = -1;
  for (const auto& [cls, count] : votes) {
    if (count > best_count) {
      best = cls;
      best_count = count;
    }
  }
  return best;
}

SceneSpec single_background_spec() {
  SceneSpec s;
  s.K = 1;
  s.height = 16;
  s.width = 16;
  s.cell = 8;
  s.background = {{1.0, 0.2f, 0.4f, 0.6f, 0.05f}};
  return s;
}

}  // namespace

TEST_CASE("default scene spec is valid and its expected frequencies are analytic") {
  const SceneSpec spec = SceneSpec::default_spec();
  CHECK_NOTHROW(spec.validate());

  const std::vector<double> freq = spec.expected_frequencies();
  REQUIRE(freq.size() == 6);
  double sum = 0.0;
  for (double f : freq) {
    CHECK(f > 0.0);
    sum += f;
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);

  // hand-computed from the lattice footprints: rect half-extents 1..2 give
  // (9+25)/2 = 17 pixels, discs r in 1..2 give (5+13)/2 = 9, r in 3..4 give
  // (29+49)/2 = 39
  CHECK(freq[3] == doctest::Approx(3.0 * 17.0 / 4096.0).epsilon(1e-12));
  CHECK(freq[4] == doctest::Approx(4.0 * 9.0 / 4096.0).epsilon(1e-12));
  CHECK(freq[5] == doctest::Approx(0.8 * 39.0 / 4096.0).epsilon(1e-12));
  const double covered = freq[3] + freq[4] + freq[5];
  CHECK(freq[0] == doctest::Approx(0.35 * (1.0 - covered)).epsilon(1e-12));

  // one rare class at about one percent of pixels
  CHECK(freq[5] < 0.015);

  const std::vector<double> cooc = spec.expected_cooccurrence();
  REQUIRE(cooc.size() == 3);
  CHECK(cooc[0] == doctest::Approx(0.8));
  CHECK(cooc[2] == doctest::Approx(0.9));
}

TEST_CASE("scene spec validation rejects inconsistent configurations") {
  const SceneSpec good = SceneSpec::default_spec();

  SceneSpec s = good;
  s.background[0].fraction = 0.3;  // sums to 0.95
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.background[1].r = 1.5f;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].jitter = 0.6f;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.K = 7;  // background + objects no longer matches
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[1].cls = 3;  // duplicate
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].cls = 2;  // collides with a background class
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].min_size = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].min_size = 3;  // above max_size 2
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[2].max_size = 40;  // diameter exceeds the image
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].count = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].present_prob = 1.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].host = 3;  // hosts must be background classes
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.objects[0].host_prob = -0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = good;
  s.background.clear();
  s.K = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  CHECK_THROWS_AS(gen_corpus(good, 0, 1), ConfigError);
}

TEST_CASE("single background class with no objects yields constant masks") {
  const SceneSpec spec = single_background_spec();
  const Corpus c = gen_corpus(spec, 4, 7);
  REQUIRE(c.pairs.size() == 4);
  CHECK(c.K == 1);
  CHECK(c.seed == 7);
  CHECK(c.spec_text == format_scene_spec(spec));
  for (const LabeledPair& p : c.pairs) {
    CHECK(p.height() == 16);
    CHECK(p.width() == 16);
    for (uint8_t m : p.mask) CHECK(m == 0);
    for (float v : p.image.data) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
    // jitter 0.05 around (0.2, 0.4, 0.6) never leaves these bands
    for (int i = 0; i < 16 * 16; ++i) {
      CHECK(std::abs(p.image[i * 3 + 0] - 0.2f) <= 0.05f + 1e-6f);
      CHECK(std::abs(p.image[i * 3 + 1] - 0.4f) <= 0.05f + 1e-6f);
      CHECK(std::abs(p.image[i * 3 + 2] - 0.6f) <= 0.05f + 1e-6f);
    }
  }
}

TEST_CASE("corpus generation is bitwise deterministic per seed") {
  const SceneSpec spec = SceneSpec::default_spec();
  const Corpus a = gen_corpus(spec, 6, 123);
  const Corpus b = gen_corpus(spec, 6, 123);
  const Corpus c = gen_corpus(spec, 6, 124);
  REQUIRE(a.pairs.size() == 6);
  for (size_t i = 0; i < 6; ++i) CHECK(pairs_bitwise_equal(a.pairs[i], b.pairs[i]));
  bool any_diff = false;
  for (size_t i = 0; i < 6; ++i) any_diff = any_diff || !pairs_bitwise_equal(a.pairs[i], c.pairs[i]);
  CHECK(any_diff);
}

TEST_CASE("every generated mask is a valid class and every image value is in [0,1]") {
  const Corpus c = gen_corpus(SceneSpec::default_spec(), 20, 5);
  for (const LabeledPair& p : c.pairs) {
    for (uint8_t m : p.mask) CHECK(m < c.K);
    for (float v : p.image.data) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
  }
}

TEST_CASE("empirical class frequencies of 500 default scenes match the analytic targets") {
  const SceneSpec spec = SceneSpec::default_spec();
  const std::vector<double> expect = spec.expected_frequencies();
  const Corpus c = gen_corpus(spec, 500, 2026);

  std::vector<int64_t> counts((size_t)spec.K, 0);
  int64_t total = 0;
  for (const LabeledPair& p : c.pairs) {
    for (uint8_t m : p.mask) {
      ++counts[m];
      ++total;
    }
  }
  for (int k = 0; k < spec.K; ++k) {
    const double empirical = (double)counts[(size_t)k] / (double)total;
    INFO("class ", k, " empirical ", empirical, " expected ", expect[(size_t)k]);
    CHECK(std::abs(empirical - expect[(size_t)k]) <= 0.03);
  }
}

TEST_CASE("a co-occurrence rule with probability one always places objects on the host class") {
  SceneSpec spec;
  spec.K = 3;
  spec.height = 64;
  spec.width = 64;
  spec.cell = 8;
  spec.background = {{0.6, 0.1f, 0.2f, 0.5f, 0.02f}, {0.4, 0.6f, 0.5f, 0.2f, 0.02f}};
  ObjectSpec o;
  o.cls = 2;
  o.disc = false;
  o.min_size = 1;
  o.max_size = 2;
  o.count = 2;
  o.present_prob = 1.0;
  o.host = 0;
  o.host_prob = 1.0;
  o.r = 0.9f;
  o.g = 0.1f;
  o.b = 0.9f;
  o.jitter = 0.02f;
  spec.objects = {o};

  CHECK(spec.expected_cooccurrence() == std::vector<double>{1.0});

  const Corpus c = gen_corpus(spec, 50, 31);
  int instances = 0, on_host = 0;
  for (const LabeledPair& p : c.pairs) {
    for (const std::vector<int>& comp : components_of(p.mask, 64, 64, 2)) {
      ++instances;
      if (ring_modal_background(p.mask, 64, 64, comp, 2) == 0) ++on_host;
    }
  }
  REQUIRE(instances >= 50);  // presence probability is one
  CHECK(on_host == instances);
}

TEST_CASE("patch extraction tiles row-major and drops remainders") {
  nd::Tensor img({512, 512, 3});
  std::vector<uint8_t> mask((size_t)512 * 512);
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = (float)((i * 31 + 7) % 997) / 997.f;
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = (uint8_t)((i * 13 + 5) % 6);

  const std::vector<LabeledPair> patches = extract_patches(img, mask, 256);
  REQUIRE(patches.size() == 4);
  for (const LabeledPair& p : patches) {
    CHECK(p.height() == 256);
    CHECK(p.width() == 256);
  }
  // row-major: patch 1 is the top-right tile
  CHECK(patches[1].image.at(0, 0, 0) == img.at(0, 256, 0));
  CHECK(patches[1].mask[0] == mask[256]);
  CHECK(patches[2].image.at(0, 0, 1) == img.at(256, 0, 1));

  // reassembly of an exactly divisible image is bitwise
  nd::Tensor re({512, 512, 3});
  std::vector<uint8_t> remask((size_t)512 * 512);
  for (int py = 0; py < 2; ++py) {
    for (int px = 0; px < 2; ++px) {
      const LabeledPair& p = patches[(size_t)(py * 2 + px)];
      for (int y = 0; y < 256; ++y) {
        for (int x = 0; x < 256; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            re.at(py * 256 + y, px * 256 + x, ch) = p.image.at(y, x, ch);
          }
          remask[(size_t)(py * 256 + y) * 512 + px * 256 + x] = p.mask[(size_t)y * 256 + x];
        }
      }
    }
  }
  CHECK(std::memcmp(re.data.data(), img.data.data(), re.data.size() * sizeof(float)) == 0);
  CHECK(remask == mask);
}

TEST_CASE("patch extraction edge cases and rejections") {
  nd::Tensor img({300, 300, 3});
  std::vector<uint8_t> mask((size_t)300 * 300, 1);
  CHECK(extract_patches(img, mask, 256).size() == 1);

  nd::Tensor rect_img({33, 70, 3});
  std::vector<uint8_t> rect_mask((size_t)33 * 70, 0);
  CHECK(extract_patches(rect_img, rect_mask, 32).size() == 2);

  CHECK_THROWS_AS(extract_patches(img, mask, 0), ConfigError);
  CHECK_THROWS_AS(extract_patches(img, mask, 301), ConfigError);
  CHECK_THROWS_AS(extract_patches(img, std::vector<uint8_t>(5, 0), 32), ShapeError);
  CHECK_THROWS_AS(extract_patches(nd::Tensor({8, 8, 4}), std::vector<uint8_t>(64, 0), 4),
                  ShapeError);
}

TEST_CASE("dataset files round trip bitwise and obey the exact size law") {
  const Corpus c = gen_corpus(SceneSpec::default_spec(), 10, 77);
  const std::string path = tmp_path("roundtrip.satp");
  save_corpus(c, path);

  std::ifstream probe(path, std::ios::binary | std::ios::ate);
  REQUIRE(probe.good());
  const int64_t size = (int64_t)probe.tellg();
  probe.close();
  CHECK(size == 18 + 10 * 13 * 64 * 64);

  const Corpus back = load_corpus(path);
  CHECK(back.K == c.K);
  REQUIRE(back.pairs.size() == c.pairs.size());
  for (size_t i = 0; i < c.pairs.size(); ++i) {
    CHECK(pairs_bitwise_equal(c.pairs[i], back.pairs[i]));
  }
  std::remove(path.c_str());
}

TEST_CASE("an empty corpus still round trips its class count") {
  Corpus c;
  c.K = 4;
  const std::string path = tmp_path("empty.satp");
  save_corpus(c, path);
  std::ifstream probe(path, std::ios::binary | std::ios::ate);
  CHECK((int64_t)probe.tellg() == 18);
  probe.close();
  const Corpus back = load_corpus(path);
  CHECK(back.K == 4);
  CHECK(back.pairs.empty());
  std::remove(path.c_str());
}

TEST_CASE("dataset loading rejects missing, corrupted, truncated, and padded files") {
  CHECK_THROWS_AS(load_corpus(tmp_path("never_written.satp")), MissingArtifactError);

  const Corpus c = gen_corpus(single_background_spec(), 2, 3);
  const std::string path = tmp_path("broken.satp");

  auto rewrite = [&](auto mutate) {
    save_corpus(c, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    mutate(bytes);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), (std::streamsize)bytes.size());
  };

  rewrite([](std::string& b) { b[0] = 'X'; });
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  rewrite([](std::string& b) { b[4] = 9; });  // version
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  rewrite([](std::string& b) { b.resize(12); });  // header cut short
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  rewrite([](std::string& b) { b.resize(b.size() - 5); });
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  rewrite([](std::string& b) { b.push_back('\0'); });
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  rewrite([](std::string& b) { b[18 + 16 * 16 * 3 * 4] = 200; });  // mask byte above K
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  // image float forced above 1
  rewrite([](std::string& b) {
    const float bad = 7.f;
    std::memcpy(&b[18], &bad, 4);
  });
  CHECK_THROWS_AS(load_corpus(path), FormatError);

  std::remove(path.c_str());
}

TEST_CASE("saving validates shape agreement and mask range") {
  Corpus c = gen_corpus(single_background_spec(), 2, 9);
  c.pairs[1].image = nd::Tensor({8, 8, 3});
  c.pairs[1].mask.assign(64, 0);
  CHECK_THROWS_AS(save_corpus(c, tmp_path("bad.satp")), ShapeError);

  Corpus d = gen_corpus(single_background_spec(), 1, 9);
  d.pairs[0].mask[3] = 7;  // K is 1
  CHECK_THROWS_AS(save_corpus(d, tmp_path("bad.satp")), FormatError);
}

TEST_CASE("downsampling averages 2x2 image blocks and keeps the top-left mask pixel") {
  LabeledPair p;
  p.image = nd::Tensor({4, 4, 3});
  p.mask.resize(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int ch = 0; ch < 3; ++ch) p.image.at(y, x, ch) = (float)(y * 4 + x) + 0.1f * (float)ch;
      p.mask[(size_t)y * 4 + x] = (uint8_t)(y * 4 + x);
    }
  }
  const LabeledPair d = downsample2(p);
  REQUIRE(d.height() == 2);
  REQUIRE(d.width() == 2);
  // block (0,0): values 0,1,4,5 -> mean 2.5
  CHECK(d.image.at(0, 0, 0) == doctest::Approx(2.5f));
  CHECK(d.image.at(0, 1, 0) == doctest::Approx(4.5f));
  CHECK(d.image.at(1, 0, 2) == doctest::Approx(10.5f + 0.2f));
  CHECK(d.mask[0] == 0);
  CHECK(d.mask[1] == 2);
  CHECK(d.mask[2] == 8);
  CHECK(d.mask[3] == 10);

  LabeledPair odd;
  odd.image = nd::Tensor({3, 4, 3});
  odd.mask.resize(12, 0);
  CHECK_THROWS_AS(downsample2(odd), ShapeError);
}

TEST_CASE("scene specs round trip through the plain-text config format") {
  const SceneSpec spec = SceneSpec::default_spec();
  const std::string text = format_scene_spec(spec);
  const SceneSpec parsed = parse_scene_spec(text);
  CHECK(format_scene_spec(parsed) == text);

  // comments and blank lines are tolerated
  const SceneSpec commented = parse_scene_spec("# corpus config\n\n" + text + "\n# end\n");
  CHECK(format_scene_spec(commented) == text);

  CHECK_THROWS_AS(parse_scene_spec(text + "volume=3\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_spec(text + "bg0.opacity=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_spec(text + "obj3.shape=star\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_spec("k=1\nheight=abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_spec("k=1\nheight 16\n"), ConfigError);
  // bg indices must be contiguous from zero
  CHECK_THROWS_AS(parse_scene_spec("k=2\nbg1.fraction=1\nbg1.color=0.1,0.1,0.1\n"), ConfigError);
  // parsing re-validates
  CHECK_THROWS_AS(parse_scene_spec("k=1\nbg0.fraction=0.9\nbg0.color=0.1,0.1,0.1\n"), ConfigError);
}
