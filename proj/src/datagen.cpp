#include "pairdiff/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace pairdiff::datagen {

using nd::Tensor;

namespace {

struct Offset {
  int dy, dx;
};

std::vector<Offset> footprint_offsets(bool disc, int size) {
  std::vector<Offset> out;
  for (int dy = -size; dy <= size; ++dy) {
    for (int dx = -size; dx <= size; ++dx) {
      if (disc && dy * dy + dx * dx > size * size) continue;
      out.push_back({dy, dx});
    }
  }
  return out;
}

// one-pixel 8-neighborhood border around the footprint
std::vector<Offset> ring_offsets(const std::vector<Offset>& fp) {
  std::set<std::pair<int, int>> body;
  for (const Offset& o : fp) body.insert({o.dy, o.dx});
  std::set<std::pair<int, int>> ring;
  for (const Offset& o : fp) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::pair<int, int> p{o.dy + dy, o.dx + dx};
        if (!body.count(p)) ring.insert(p);
      }
    }
  }
  std::vector<Offset> out;
  out.reserve(ring.size());
  for (const auto& p : ring) out.push_back({p.first, p.second});
  return out;
}

double expected_area(const ObjectSpec& o) {
  double acc = 0.0;
  for (int s = o.min_size; s <= o.max_size; ++s) {
    acc += static_cast<double>(footprint_offsets(o.disc, s).size());
  }
  return acc / (o.max_size - o.min_size + 1);
}

// Assigns classes base..base+fractions.size()-1 to the given pixels (already
// sorted by noise value) at exact cumulative quantile counts.
void assign_quantiles(const std::vector<int>& sorted_pixels, const std::vector<double>& fractions,
                      std::vector<uint8_t>& out, int base = 0) {
  const int64_t m = static_cast<int64_t>(sorted_pixels.size());
  double cum = 0.0;
  int64_t from = 0;
  for (size_t c = 0; c < fractions.size(); ++c) {
    cum += fractions[c];
    const int64_t to = c + 1 == fractions.size() ? m : std::llround(cum * static_cast<double>(m));
    for (int64_t i = from; i < to && i < m; ++i) {
      out[static_cast<size_t>(sorted_pixels[static_cast<size_t>(i)])] =
          static_cast<uint8_t>(base + static_cast<int>(c));
    }
    from = std::max(from, to);
  }
}

LabeledPair gen_scene(const SceneSpec& spec, RngStream& rng) {
  const int H = spec.height, W = spec.width;
  const int64_t npix = static_cast<int64_t>(H) * W;
  const int B = static_cast<int>(spec.background.size());

  // bilinear value noise over a coarse uniform lattice
  const int gh = H / spec.cell + 2, gw = W / spec.cell + 2;
  std::vector<double> lattice(static_cast<size_t>(gh) * gw);
  for (double& v : lattice) v = rng.uniform();
  std::vector<double> field(static_cast<size_t>(npix));
  for (int y = 0; y < H; ++y) {
    const int gy = y / spec.cell;
    const double fy = static_cast<double>(y % spec.cell) / spec.cell;
    for (int x = 0; x < W; ++x) {
      const int gx = x / spec.cell;
      const double fx = static_cast<double>(x % spec.cell) / spec.cell;
      const double a = lattice[static_cast<size_t>(gy) * gw + gx];
      const double b = lattice[static_cast<size_t>(gy) * gw + gx + 1];
      const double c = lattice[static_cast<size_t>(gy + 1) * gw + gx];
      const double d = lattice[static_cast<size_t>(gy + 1) * gw + gx + 1];
      field[static_cast<size_t>(y) * W + x] =
          (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
  }

  std::vector<int> order(static_cast<size_t>(npix));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return field[static_cast<size_t>(a)] != field[static_cast<size_t>(b)]
               ? field[static_cast<size_t>(a)] < field[static_cast<size_t>(b)]
               : a < b;
  });

  std::vector<double> fractions(spec.background.size());
  for (size_t i = 0; i < fractions.size(); ++i) fractions[i] = spec.background[i].fraction;

  // full-image noise bands guide object placement
  std::vector<uint8_t> band(static_cast<size_t>(npix));
  assign_quantiles(order, fractions, band);

  std::vector<uint8_t> mask(static_cast<size_t>(npix), kIgnoreIndex);
  std::vector<uint8_t> occupied(static_cast<size_t>(npix), 0);

  for (const ObjectSpec& o : spec.objects) {
    if (rng.uniform() >= o.present_prob) continue;
    for (int k = 0; k < o.count; ++k) {
      const int size =
          o.min_size + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(o.max_size - o.min_size + 1)));
      const bool constrained = o.host >= 0 && rng.uniform() < o.host_prob;
      const std::vector<Offset> fp = footprint_offsets(o.disc, size);
      const std::vector<Offset> ring = ring_offsets(fp);

      auto fp_free = [&](int cy, int cx) {
        for (const Offset& f : fp) {
          if (occupied[static_cast<size_t>(cy + f.dy) * W + (cx + f.dx)]) return false;
        }
        return true;
      };
      auto on_host = [&](int cy, int cx, bool include_ring) {
        for (const Offset& f : fp) {
          if (band[static_cast<size_t>(cy + f.dy) * W + (cx + f.dx)] != o.host) return false;
        }
        if (!include_ring) return true;
        for (const Offset& f : ring) {
          const int y = cy + f.dy, x = cx + f.dx;
          if (y < 0 || y >= H || x < 0 || x >= W) continue;
          if (band[static_cast<size_t>(y) * W + x] != o.host) return false;
        }
        return true;
      };

      // most specific placement first: whole footprint and ring on the host
      // band, then center-on-host, then anywhere free
      std::vector<int> centers;
      for (int tier = constrained ? 0 : 2; tier < 3 && centers.empty(); ++tier) {
        for (int cy = size; cy < H - size; ++cy) {
          for (int cx = size; cx < W - size; ++cx) {
            if (!fp_free(cy, cx)) continue;
            if (tier == 0 && !on_host(cy, cx, true)) continue;
            if (tier == 1 && band[static_cast<size_t>(cy) * W + cx] != o.host) continue;
            centers.push_back(cy * W + cx);
          }
        }
      }
      if (centers.empty()) continue;

      const int center = centers[rng.uniform_int(centers.size())];
      const int cy = center / W, cx = center % W;
      for (const Offset& f : fp) {
        const size_t p = static_cast<size_t>(cy + f.dy) * W + (cx + f.dx);
        mask[p] = static_cast<uint8_t>(o.cls);
        occupied[p] = 1;
      }
      for (const Offset& f : ring) {
        const int y = cy + f.dy, x = cx + f.dx;
        if (y < 0 || y >= H || x < 0 || x >= W) continue;
        occupied[static_cast<size_t>(y) * W + x] = 1;
      }
    }
  }

  // background classes from exact quantiles over the pixels objects left
  // uncovered, so per-image conditional fractions hit the spec targets
  std::vector<int> rest;
  rest.reserve(static_cast<size_t>(npix));
  for (int p : order) {
    if (mask[static_cast<size_t>(p)] == kIgnoreIndex) rest.push_back(p);
  }
  assign_quantiles(rest, fractions, mask);

  // per-class colors with per-pixel jitter
  struct Color {
    float r, g, b, jitter;
  };
  std::vector<Color> palette(static_cast<size_t>(spec.K));
  for (int i = 0; i < B; ++i) {
    palette[static_cast<size_t>(i)] = {spec.background[static_cast<size_t>(i)].r,
                                       spec.background[static_cast<size_t>(i)].g,
                                       spec.background[static_cast<size_t>(i)].b,
                                       spec.background[static_cast<size_t>(i)].jitter};
  }
  for (const ObjectSpec& o : spec.objects) {
    palette[static_cast<size_t>(o.cls)] = {o.r, o.g, o.b, o.jitter};
  }

  LabeledPair pair;
  pair.image = Tensor({H, W, 3});
  pair.mask = std::move(mask);
  for (int64_t p = 0; p < npix; ++p) {
    const Color& c = palette[pair.mask[static_cast<size_t>(p)]];
    const float base[3] = {c.r, c.g, c.b};
    for (int ch = 0; ch < 3; ++ch) {
      const float v = base[ch] + c.jitter * (2.f * static_cast<float>(rng.uniform()) - 1.f);
      pair.image[p * 3 + ch] = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    }
  }
  return pair;
}

}  // namespace

SceneSpec SceneSpec::default_spec() {
  SceneSpec s;
  s.K = 6;
  s.height = 64;
  s.width = 64;
  s.cell = 8;
  s.background = {
      {0.35, 0.10f, 0.25f, 0.55f, 0.05f},  // water
      {0.40, 0.15f, 0.55f, 0.20f, 0.05f},  // grass
      {0.25, 0.50f, 0.38f, 0.22f, 0.05f},  // soil
  };
  ObjectSpec building;
  building.cls = 3;
  building.disc = false;
  building.min_size = 1;
  building.max_size = 2;
  building.count = 3;
  building.present_prob = 1.0;
  building.host = 1;
  building.host_prob = 0.8;
  building.r = 0.75f;
  building.g = 0.12f;
  building.b = 0.10f;
  building.jitter = 0.04f;
  ObjectSpec vehicle;
  vehicle.cls = 4;
  vehicle.disc = true;
  vehicle.min_size = 1;
  vehicle.max_size = 2;
  vehicle.count = 4;
  vehicle.present_prob = 1.0;
  vehicle.host = 2;
  vehicle.host_prob = 0.7;
  vehicle.r = 0.92f;
  vehicle.g = 0.85f;
  vehicle.b = 0.12f;
  vehicle.jitter = 0.04f;
  ObjectSpec pond;  // the rare class, ~0.8% of pixels
  pond.cls = 5;
  pond.disc = true;
  pond.min_size = 3;
  pond.max_size = 4;
  pond.count = 1;
  pond.present_prob = 0.8;
  pond.host = 1;
  pond.host_prob = 0.9;
  pond.r = 0.05f;
  pond.g = 0.80f;
  pond.b = 0.85f;
  pond.jitter = 0.03f;
  s.objects = {building, vehicle, pond};
  return s;
}

void SceneSpec::validate() const {
  if (K < 1 || K > 254) throw ConfigError("scene: class count must be in 1..254");
  if (height < 1 || width < 1) throw ConfigError("scene: image size must be positive");
  if (cell < 1) throw ConfigError("scene: noise cell must be positive");
  if (background.empty()) throw ConfigError("scene: needs at least one background class");
  double sum = 0.0;
  for (const BackgroundSpec& b : background) {
    if (b.fraction < 0.0) throw ConfigError("scene: negative background fraction");
    sum += b.fraction;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ConfigError("scene: background fractions sum to " + std::to_string(sum) +
                      ", expected 1 within 1e-6");
  }
  const int B = static_cast<int>(background.size());
  if (B + static_cast<int>(objects.size()) != K) {
    throw ConfigError("scene: background plus object classes must equal K");
  }
  auto color_ok = [](float r, float g, float b, float jitter) {
    return r >= 0.f && r <= 1.f && g >= 0.f && g <= 1.f && b >= 0.f && b <= 1.f && jitter >= 0.f &&
           jitter <= 0.5f;
  };
  for (const BackgroundSpec& b : background) {
    if (!color_ok(b.r, b.g, b.b, b.jitter)) throw ConfigError("scene: background color outside [0,1]");
  }
  std::set<int> ids;
  for (const ObjectSpec& o : objects) {
    if (o.cls < B || o.cls >= K) {
      throw ConfigError("scene: object class " + std::to_string(o.cls) + " outside " +
                        std::to_string(B) + ".." + std::to_string(K - 1));
    }
    if (!ids.insert(o.cls).second) throw ConfigError("scene: duplicate object class");
    if (o.min_size < 1 || o.min_size > o.max_size) throw ConfigError("scene: bad object size range");
    if (2 * o.max_size + 1 > std::min(height, width)) {
      throw ConfigError("scene: object class " + std::to_string(o.cls) + " cannot fit the image");
    }
    if (o.count < 1) throw ConfigError("scene: object count must be positive");
    if (o.present_prob < 0.0 || o.present_prob > 1.0) throw ConfigError("scene: present_prob outside [0,1]");
    if (o.host < -1 || o.host >= B) throw ConfigError("scene: object host outside background classes");
    if (o.host_prob < 0.0 || o.host_prob > 1.0) throw ConfigError("scene: host_prob outside [0,1]");
    if (!color_ok(o.r, o.g, o.b, o.jitter)) throw ConfigError("scene: object color outside [0,1]");
  }
}

std::vector<double> SceneSpec::expected_frequencies() const {
  validate();
  const double npix = static_cast<double>(height) * width;
  std::vector<double> freq(static_cast<size_t>(K), 0.0);
  double covered = 0.0;
  for (const ObjectSpec& o : objects) {
    const double f = o.present_prob * o.count * expected_area(o) / npix;
    freq[static_cast<size_t>(o.cls)] = f;
    covered += f;
  }
  for (size_t i = 0; i < background.size(); ++i) {
    freq[i] = background[i].fraction * (1.0 - covered);
  }
  return freq;
}

std::vector<double> SceneSpec::expected_cooccurrence() const {
  std::vector<double> out;
  out.reserve(objects.size());
  for (const ObjectSpec& o : objects) out.push_back(o.host >= 0 ? o.host_prob : 0.0);
  return out;
}

Corpus gen_corpus(const SceneSpec& spec, int n, uint64_t seed) {
  spec.validate();
  if (n < 1) throw ConfigError("gen_corpus: need at least one scene");
  Corpus corpus;
  corpus.K = spec.K;
  corpus.seed = seed;
  corpus.spec_text = format_scene_spec(spec);
  corpus.pairs.resize(static_cast<size_t>(n));
  RngStream root(seed);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    RngStream stream = root.derive(static_cast<uint64_t>(i));
    corpus.pairs[static_cast<size_t>(i)] = gen_scene(spec, stream);
  }
  return corpus;
}

std::vector<LabeledPair> extract_patches(const Tensor& image, const std::vector<uint8_t>& mask,
                                         int patch) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("extract_patches: image must be (H, W, 3), got " + nd::shape_str(image.shape));
  }
  const int H = image.dim(0), W = image.dim(1);
  if (mask.size() != static_cast<size_t>(H) * W) {
    throw ShapeError("extract_patches: mask size does not match image");
  }
  if (patch < 1) throw ConfigError("extract_patches: patch size must be positive");
  if (patch > H || patch > W) {
    throw ConfigError("extract_patches: patch " + std::to_string(patch) + " exceeds image " +
                      std::to_string(H) + "x" + std::to_string(W));
  }
  const int rows = H / patch, cols = W / patch;
  std::vector<LabeledPair> out;
  out.reserve(static_cast<size_t>(rows) * cols);
  for (int py = 0; py < rows; ++py) {
    for (int px = 0; px < cols; ++px) {
      LabeledPair p;
      p.image = Tensor({patch, patch, 3});
      p.mask.resize(static_cast<size_t>(patch) * patch);
      for (int y = 0; y < patch; ++y) {
        const int sy = py * patch + y;
        std::memcpy(&p.image.data[static_cast<size_t>(y) * patch * 3],
                    &image.data[(static_cast<size_t>(sy) * W + static_cast<size_t>(px) * patch) * 3],
                    sizeof(float) * static_cast<size_t>(patch) * 3);
        std::memcpy(&p.mask[static_cast<size_t>(y) * patch],
                    &mask[static_cast<size_t>(sy) * W + static_cast<size_t>(px) * patch],
                    static_cast<size_t>(patch));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'A', 'T', 'P'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2] = {0, 0};
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4] = {0, 0, 0, 0};
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  int H = 0, W = 0;
  if (!corpus.pairs.empty()) {
    H = corpus.pairs.front().height();
    W = corpus.pairs.front().width();
  }
  if (H > 0xffff || W > 0xffff || corpus.K < 0 || corpus.K > 0xffff) {
    throw FormatError("save_corpus: dimensions exceed the format's 16-bit fields");
  }
  for (const LabeledPair& p : corpus.pairs) {
    if (p.height() != H || p.width() != W) {
      throw ShapeError("save_corpus: all pairs must share one image size");
    }
    for (uint8_t m : p.mask) {
      if (m >= corpus.K && m != kIgnoreIndex) {
        throw FormatError("save_corpus: mask value " + std::to_string(m) + " outside 0.." +
                          std::to_string(corpus.K - 1));
      }
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open for write: " + tmp);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(corpus.pairs.size()));
    put_u16(os, static_cast<uint16_t>(H));
    put_u16(os, static_cast<uint16_t>(W));
    put_u16(os, static_cast<uint16_t>(corpus.K));
    for (const LabeledPair& p : corpus.pairs) {
      os.write(reinterpret_cast<const char*>(p.image.data.data()),
               static_cast<std::streamsize>(p.image.data.size() * sizeof(float)));
      os.write(reinterpret_cast<const char*>(p.mask.data()),
               static_cast<std::streamsize>(p.mask.size()));
    }
    if (!os) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("rename failed: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("dataset file not found: " + path);

  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a dataset file (bad magic): " + path);
  }
  const uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version) + ": " + path);
  }
  const uint32_t n = get_u32(is);
  const int H = get_u16(is);
  const int W = get_u16(is);
  const int K = get_u16(is);
  if (!is) throw FormatError("truncated dataset header: " + path);
  if (K < 1) throw FormatError("dataset declares no classes: " + path);
  if (n > 0 && (H < 1 || W < 1)) throw FormatError("dataset declares empty images: " + path);

  Corpus corpus;
  corpus.K = K;
  corpus.pairs.resize(n);
  const size_t npix = static_cast<size_t>(H) * static_cast<size_t>(W);
  for (uint32_t i = 0; i < n; ++i) {
    LabeledPair& p = corpus.pairs[i];
    p.image = Tensor({H, W, 3});
    p.mask.resize(npix);
    is.read(reinterpret_cast<char*>(p.image.data.data()),
            static_cast<std::streamsize>(npix * 3 * sizeof(float)));
    is.read(reinterpret_cast<char*>(p.mask.data()), static_cast<std::streamsize>(npix));
    if (!is) {
      throw FormatError("truncated dataset payload at record " + std::to_string(i) + ": " + path);
    }
    for (float v : p.image.data) {
      if (!(v >= 0.f && v <= 1.f)) {
        throw FormatError("image value outside [0,1] at record " + std::to_string(i) + ": " + path);
      }
    }
    for (uint8_t m : p.mask) {
      if (m >= K && m != kIgnoreIndex) {
        throw FormatError("mask value " + std::to_string(m) + " outside 0.." + std::to_string(K - 1) +
                          " at record " + std::to_string(i) + ": " + path);
      }
    }
  }
  if (is.peek() != EOF) throw FormatError("trailing bytes after last record: " + path);
  return corpus;
}

LabeledPair downsample2(const LabeledPair& pair) {
  const int H = pair.height(), W = pair.width();
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("downsample2: needs even dimensions, got " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  LabeledPair out;
  out.image = Tensor({H / 2, W / 2, 3});
  out.mask.resize(static_cast<size_t>(H / 2) * (W / 2));
  for (int y = 0; y < H / 2; ++y) {
    for (int x = 0; x < W / 2; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double sum = static_cast<double>(pair.image.at(2 * y, 2 * x, c)) +
                           pair.image.at(2 * y, 2 * x + 1, c) + pair.image.at(2 * y + 1, 2 * x, c) +
                           pair.image.at(2 * y + 1, 2 * x + 1, c);
        out.image.at(y, x, c) = static_cast<float>(sum / 4.0);
      }
      out.mask[static_cast<size_t>(y) * (W / 2) + x] =
          pair.mask[static_cast<size_t>(2 * y) * W + 2 * x];
    }
  }
  return out;
}

namespace {

double parse_num(const std::string& s, const std::string& line) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("scene config: bad number in '" + line + "'");
  }
}

int parse_int(const std::string& s, const std::string& line) {
  const double v = parse_num(s, line);
  if (v != std::floor(v)) throw ConfigError("scene config: expected integer in '" + line + "'");
  return static_cast<int>(v);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& text) {
  SceneSpec spec;
  spec.K = 0;
  std::map<int, BackgroundSpec> bgs;
  std::map<int, ObjectSpec> objs;

  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("scene config: expected key=value in '" + raw + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "k") {
      spec.K = parse_int(val, raw);
    } else if (key == "height") {
      spec.height = parse_int(val, raw);
    } else if (key == "width") {
      spec.width = parse_int(val, raw);
    } else if (key == "cell") {
      spec.cell = parse_int(val, raw);
    } else if (key.rfind("bg", 0) == 0 || key.rfind("obj", 0) == 0) {
      const bool is_bg = key.rfind("bg", 0) == 0;
      const size_t dot = key.find('.');
      if (dot == std::string::npos) throw ConfigError("scene config: unknown key '" + key + "'");
      const std::string idx_str = key.substr(is_bg ? 2 : 3, dot - (is_bg ? 2 : 3));
      const int idx = parse_int(idx_str, raw);
      const std::string field = key.substr(dot + 1);
      if (is_bg) {
        BackgroundSpec& b = bgs[idx];
        if (field == "fraction") {
          b.fraction = parse_num(val, raw);
        } else if (field == "color") {
          auto parts = split_commas(val);
          if (parts.size() != 3) throw ConfigError("scene config: color needs r,g,b in '" + raw + "'");
          b.r = static_cast<float>(parse_num(parts[0], raw));
          b.g = static_cast<float>(parse_num(parts[1], raw));
          b.b = static_cast<float>(parse_num(parts[2], raw));
        } else if (field == "jitter") {
          b.jitter = static_cast<float>(parse_num(val, raw));
        } else {
          throw ConfigError("scene config: unknown key '" + key + "'");
        }
      } else {
        ObjectSpec& o = objs[idx];
        o.cls = idx;
        if (field == "shape") {
          if (val == "disc") {
            o.disc = true;
          } else if (val == "rect") {
            o.disc = false;
          } else {
            throw ConfigError("scene config: shape must be rect or disc in '" + raw + "'");
          }
        } else if (field == "size") {
          auto parts = split_commas(val);
          if (parts.size() != 2) throw ConfigError("scene config: size needs min,max in '" + raw + "'");
          o.min_size = parse_int(parts[0], raw);
          o.max_size = parse_int(parts[1], raw);
        } else if (field == "count") {
          o.count = parse_int(val, raw);
        } else if (field == "present") {
          o.present_prob = parse_num(val, raw);
        } else if (field == "host") {
          o.host = parse_int(val, raw);
        } else if (field == "host_prob") {
          o.host_prob = parse_num(val, raw);
        } else if (field == "color") {
          auto parts = split_commas(val);
          if (parts.size() != 3) throw ConfigError("scene config: color needs r,g,b in '" + raw + "'");
          o.r = static_cast<float>(parse_num(parts[0], raw));
          o.g = static_cast<float>(parse_num(parts[1], raw));
          o.b = static_cast<float>(parse_num(parts[2], raw));
        } else if (field == "jitter") {
          o.jitter = static_cast<float>(parse_num(val, raw));
        } else {
          throw ConfigError("scene config: unknown key '" + key + "'");
        }
      }
    } else {
      throw ConfigError("scene config: unknown key '" + key + "'");
    }
  }

  int want = 0;
  for (const auto& [idx, b] : bgs) {
    if (idx != want++) throw ConfigError("scene config: background classes must be bg0..bgN-1");
    spec.background.push_back(b);
  }
  for (const auto& [idx, o] : objs) spec.objects.push_back(o);
  spec.validate();
  return spec;
}

std::string format_scene_spec(const SceneSpec& spec) {
  char buf[256];
  std::string out;
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
    out += '\n';
  };
  line("k=%d", spec.K);
  line("height=%d", spec.height);
  line("width=%d", spec.width);
  line("cell=%d", spec.cell);
  for (size_t i = 0; i < spec.background.size(); ++i) {
    const BackgroundSpec& b = spec.background[i];
    line("bg%zu.fraction=%.9g", i, b.fraction);
    line("bg%zu.color=%.9g,%.9g,%.9g", i, static_cast<double>(b.r), static_cast<double>(b.g),
         static_cast<double>(b.b));
    line("bg%zu.jitter=%.9g", i, static_cast<double>(b.jitter));
  }
  for (const ObjectSpec& o : spec.objects) {
    line("obj%d.shape=%s", o.cls, o.disc ? "disc" : "rect");
    line("obj%d.size=%d,%d", o.cls, o.min_size, o.max_size);
    line("obj%d.count=%d", o.cls, o.count);
    line("obj%d.present=%.9g", o.cls, o.present_prob);
    line("obj%d.host=%d", o.cls, o.host);
    line("obj%d.host_prob=%.9g", o.cls, o.host_prob);
    line("obj%d.color=%.9g,%.9g,%.9g", o.cls, static_cast<double>(o.r), static_cast<double>(o.g),
         static_cast<double>(o.b));
    line("obj%d.jitter=%.9g", o.cls, static_cast<double>(o.jitter));
  }
  return out;
}

}  // namespace pairdiff::datagen
