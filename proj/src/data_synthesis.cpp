// Copyright 2026 The SNIDER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "snider/data_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace snider {

namespace fs = std::filesystem;

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.f, 1.f);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

}  // namespace

// ---------------------------------------------------------------------------
// PNM I/O

void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pnm: image must have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pnm: cannot open '" + path + "'");
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    size_t i = 0;
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) row[i++] = to_byte(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_pnm: short write to '" + path + "'");
}

namespace {
int read_pnm_token(std::istream& in, const std::string& path) {
  // Header tokens are separated by whitespace; '#' starts a comment.
  int ch = in.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
    }
    ch = in.get();
  }
  std::string tok;
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  try {
    return std::stoi(tok);
  } catch (...) {
    throw std::runtime_error("read_pnm: malformed header in '" + path + "'");
  }
}
}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pnm: cannot open '" + path + "'");
  char magic[2];
  in.read(magic, 2);
  int channels;
  if (in && magic[0] == 'P' && magic[1] == '6')
    channels = 3;
  else if (in && magic[0] == 'P' && magic[1] == '5')
    channels = 1;
  else
    throw std::runtime_error("read_pnm: '" + path + "' is not a binary PPM/PGM");
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_pnm: unsupported header in '" + path + "'");
  Image img(channels, h, w);
  std::vector<uint8_t> row(static_cast<size_t>(w) * channels);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error("read_pnm: truncated pixel data in '" + path + "'");
    size_t i = 0;
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(row[i++]) / 255.f;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Glyphs

const GlyphSet& digit_glyphs() {
  static const GlyphSet set = [] {
    const std::array<std::array<const char*, 7>, 10> rows = {{
        {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
        {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
        {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},  // 2
        {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
        {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
        {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
        {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
        {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
        {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
        {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
    }};
    GlyphSet s;
    for (int d = 0; d < 10; ++d) {
      Glyph g;
      g.width = 5;
      g.height = 7;
      g.mask.resize(35);
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 5; ++x)
          g.mask[static_cast<size_t>(y) * 5 + x] =
              rows[static_cast<size_t>(d)][static_cast<size_t>(y)][x] == '1';
      s[static_cast<char>('0' + d)] = g;
    }
    return s;
  }();
  return set;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

void draw_bitmap(Image& img, const std::vector<uint8_t>& mask, int mw, int mh,
                 int x0, int y0, int scale, float ink) {
  for (int my = 0; my < mh; ++my)
    for (int mx = 0; mx < mw; ++mx) {
      if (!mask[static_cast<size_t>(my) * mw + mx]) continue;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) {
          const int y = y0 + my * scale + dy;
          const int x = x0 + mx * scale + dx;
          for (int c = 0; c < img.channels; ++c) img.at(c, y, x) = ink;
        }
    }
}

// Plus-shaped logo block drawn when decoration is enabled.
const std::vector<uint8_t>& logo_mask() {
  static const std::vector<uint8_t> m = {0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1,
                                         1, 1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0};
  return m;
}

}  // namespace

Image render_plate(const PlateSpec& spec, int size, uint64_t seed,
                   RenderInfo* info) {
  if (size < 32)
    throw std::invalid_argument("render_plate: size must be >= 32");
  const size_t n = spec.digits.size();
  if (n < 4 || n > 8)
    throw std::invalid_argument("render_plate: digit string must have 4 to 8 "
                                "characters, got '" + spec.digits + "'");
  int gw = 0, gh = 0;
  for (char ch : spec.digits) {
    auto it = spec.glyphs.find(ch);
    if (it == spec.glyphs.end())
      throw std::invalid_argument(std::string("render_plate: no glyph for '") +
                                  ch + "'");
    if (gw == 0) {
      gw = it->second.width;
      gh = it->second.height;
    } else if (it->second.width != gw || it->second.height != gh) {
      throw std::invalid_argument("render_plate: glyph sizes are not uniform");
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-spec.layout.intensity_jitter,
                                                spec.layout.intensity_jitter);
  const float bg = std::clamp(
      spec.layout.background + static_cast<float>(jitter(rng)), 0.f, 1.f);
  const float fg = std::clamp(
      spec.layout.foreground + static_cast<float>(jitter(rng)), 0.f, 1.f);

  const int margin = std::max(2, size / 16);
  const int avail = size - 2 * margin;
  // Character cells are gw wide with a one-glyph-pixel gap.
  const int cols = static_cast<int>(n) * (gw + 1) - 1;
  const int scale = std::min(avail / cols, avail / gh);
  if (scale < 1)
    throw std::invalid_argument("render_plate: layout overfull, " +
                                std::to_string(n) + " characters do not fit " +
                                std::to_string(size) + "px");
  const int tw = scale * cols, th = scale * gh;
  const int x0 = (size - tw) / 2, y0 = (size - th) / 2;

  Image img(3, size, size, bg);
  RenderInfo local;
  local.background = bg;
  local.foreground = fg;
  local.scale = scale;
  int x = x0;
  for (char ch : spec.digits) {
    const Glyph& g = spec.glyphs.at(ch);
    draw_bitmap(img, g.mask, g.width, g.height, x, y0, scale, fg);
    local.boxes.push_back({ch, x, y0, scale * gw, scale * gh});
    x += scale * (gw + 1);
  }
  if (spec.decoration) {
    const int ls = std::max(1, scale / 2);
    if (margin + 5 * ls + ls <= y0)  // only when it clears the text band
      draw_bitmap(img, logo_mask(), 5, 5, margin, margin, ls, fg);
  }
  if (info) *info = std::move(local);
  return img;
}

// ---------------------------------------------------------------------------
// Geometry and degradation

namespace {

// Bilinear fetch with weights from the unclamped fraction and clamped corner
// indices. Equal corners short-circuit so flat regions stay bit-exact.
float bilinear(const Image& img, int c, double sy, double sx) {
  const int x1 = static_cast<int>(std::floor(sx));
  const int y1 = static_cast<int>(std::floor(sy));
  const double fx = sx - x1, fy = sy - y1;
  const int x1c = std::clamp(x1, 0, img.width - 1);
  const int x2c = std::clamp(x1 + 1, 0, img.width - 1);
  const int y1c = std::clamp(y1, 0, img.height - 1);
  const int y2c = std::clamp(y1 + 1, 0, img.height - 1);
  const float p11 = img.at(c, y1c, x1c), p12 = img.at(c, y1c, x2c);
  const float p21 = img.at(c, y2c, x1c), p22 = img.at(c, y2c, x2c);
  if (p11 == p12 && p11 == p21 && p11 == p22) return p11;
  return static_cast<float>((1 - fy) * ((1 - fx) * p11 + fx * p12) +
                            fy * ((1 - fx) * p21 + fx * p22));
}

}  // namespace

Image rotate(const Image& img, double angle_deg, float fill) {
  // Exact sine/cosine on multiples of 90 degrees so cardinal rotations are
  // pure pixel permutations.
  double c, s;
  const double norm = angle_deg - 360.0 * std::floor(angle_deg / 360.0);
  if (norm == 0.0) {
    c = 1;
    s = 0;
  } else if (norm == 90.0) {
    c = 0;
    s = 1;
  } else if (norm == 180.0) {
    c = -1;
    s = 0;
  } else if (norm == 270.0) {
    c = 0;
    s = -1;
  } else {
    const double th = angle_deg * M_PI / 180.0;
    c = std::cos(th);
    s = std::sin(th);
  }
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  Image out(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      if (sx < 0 || sx > img.width - 1 || sy < 0 || sy > img.height - 1) {
        for (int ch = 0; ch < img.channels; ++ch) out.at(ch, y, x) = fill;
      } else {
        for (int ch = 0; ch < img.channels; ++ch)
          out.at(ch, y, x) = bilinear(img, ch, sy, sx);
      }
    }
  return out;
}

Image area_downsample4x(const Image& img) {
  if (img.height % 4 != 0 || img.width % 4 != 0)
    throw std::invalid_argument(
        "area_downsample4x: spatial dims must be divisible by 4");
  const int hs = img.height / 4, ws = img.width / 4;
  Image small(img.channels, hs, ws);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < hs; ++y)
      for (int x = 0; x < ws; ++x) {
        float sum = 0;
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx)
            sum += img.at(c, 4 * y + dy, 4 * x + dx);
        small.at(c, y, x) = sum / 16.f;
      }
  return small;
}

Image bilinear_upsample4x(const Image& small) {
  Image out(small.channels, small.height * 4, small.width * 4);
  for (int c = 0; c < small.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) =
            bilinear(small, c, (y + 0.5) / 4.0 - 0.5, (x + 0.5) / 4.0 - 0.5);
  return out;
}

Image degrade(const Image& img, double noise_sigma, uint64_t seed) {
  Image out = bilinear_upsample4x(area_downsample4x(img));
  if (noise_sigma > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (float& v : out.data)
      v = std::clamp(v + static_cast<float>(noise(rng)), 0.f, 1.f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Otsu thresholding

int otsu_threshold(const std::array<int64_t, 256>& hist) {
  int64_t total = 0;
  double sum = 0;
  int bins_used = 0;
  for (int t = 0; t < 256; ++t) {
    total += hist[static_cast<size_t>(t)];
    sum += static_cast<double>(t) * hist[static_cast<size_t>(t)];
    bins_used += hist[static_cast<size_t>(t)] > 0;
  }
  if (total == 0 || bins_used <= 1) return -1;
  int64_t w0 = 0;
  double sum0 = 0, best = -1.0;
  int best_t = -1;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<size_t>(t)];
    sum0 += static_cast<double>(t) * hist[static_cast<size_t>(t)];
    const int64_t w1 = total - w0;
    if (w0 == 0) continue;
    if (w1 == 0) break;
    const double mu0 = sum0 / static_cast<double>(w0);
    const double mu1 = (sum - sum0) / static_cast<double>(w1);
    const double between = static_cast<double>(w0) * static_cast<double>(w1) *
                           (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

Image otsu_binarize(const Image& img) {
  std::array<int64_t, 256> hist{};
  std::vector<uint8_t> gray(static_cast<size_t>(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float acc = 0;
      for (int c = 0; c < img.channels; ++c) acc += img.at(c, y, x);
      const uint8_t g = to_byte(acc / static_cast<float>(img.channels));
      gray[static_cast<size_t>(y) * img.width + x] = g;
      ++hist[g];
    }
  const int t = otsu_threshold(hist);
  Image mask(1, img.height, img.width);
  if (t < 0) return mask;  // constant image: all zero
  for (size_t i = 0; i < gray.size(); ++i)
    mask.data[i] = gray[i] > t ? 1.f : 0.f;
  return mask;
}

// ---------------------------------------------------------------------------
// Sample and dataset generation

TrainingSample generate_sample(const PlateSpec& spec, double angle, int size,
                               uint64_t seed, double noise_sigma) {
  int angle_idx = -1;
  for (size_t i = 0; i < kSampleAngles.size(); ++i)
    if (angle == static_cast<double>(kSampleAngles[i]))
      angle_idx = static_cast<int>(i);
  if (angle_idx < 0)
    throw std::invalid_argument(
        "generate_sample: angle must be one of {-30,-15,+15,+30} degrees");
  if (size % 4 != 0)
    throw std::invalid_argument("generate_sample: size must be divisible by 4");

  TrainingSample s;
  RenderInfo info;
  s.i_hq_0 = render_plate(spec, size, seed, &info);
  s.i_hq = rotate(s.i_hq_0, angle, info.background);
  s.i_lq = degrade(s.i_hq, noise_sigma,
                   mix_seed(seed, static_cast<uint64_t>(angle_idx)));
  s.i_seg = otsu_binarize(s.i_lq);
  s.count = static_cast<int>(spec.digits.size());
  s.angle = static_cast<int>(angle);
  return s;
}

namespace {

std::string angle_tag(int angle) {
  return (angle < 0 ? "m" : "p") + std::to_string(std::abs(angle));
}

void write_boxes(const std::string& path, const std::vector<CharBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  for (const auto& b : boxes)
    out << b.ch << " " << b.x << " " << b.y << " " << b.w << " " << b.h << "\n";
}

void write_manifest(const std::string& path, int size,
                    const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  out << "snider-manifest v1\n";
  out << "size " << size << "\n";
  for (const auto& r : records) {
    out << "sample " << r.id << " " << r.lq << " " << r.hq << " " << r.hq0
        << " " << r.seg << " " << r.boxes << " " << r.angle << " " << r.count
        << " " << r.digits << "\n";
  }
}

}  // namespace

std::vector<CharBox> read_boxes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_boxes: cannot open '" + path + "'");
  std::vector<CharBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CharBox b;
    if (!(ls >> b.ch >> b.x >> b.y >> b.w >> b.h))
      throw std::runtime_error("read_boxes: malformed line in '" + path + "'");
    boxes.push_back(b);
  }
  return boxes;
}

std::pair<std::string, std::string> make_dataset(const DatasetOptions& opts,
                                                 const std::string& out_dir) {
  if (opts.n_plates < 1)
    throw std::invalid_argument("make_dataset: need at least one plate");
  if (!(opts.split > 0.0 && opts.split < 1.0))
    throw std::invalid_argument("make_dataset: split must lie in (0,1)");
  if (opts.min_digits < 4 || opts.max_digits > 8 ||
      opts.min_digits > opts.max_digits)
    throw std::invalid_argument("make_dataset: digit count range must sit in [4,8]");
  if (opts.size % 4 != 0)
    throw std::invalid_argument("make_dataset: size must be divisible by 4, got " +
                                std::to_string(opts.size));
  {
    // Fail before writing anything if the longest string cannot be laid out.
    const int margin = std::max(2, opts.size / 16);
    const int avail = opts.size - 2 * margin;
    const int cols = opts.max_digits * 6 - 1;
    if (opts.size < 32 || avail / cols < 1 || avail / 7 < 1)
      throw std::invalid_argument(
          "make_dataset: size " + std::to_string(opts.size) + " cannot fit " +
          std::to_string(opts.max_digits) +
          " digits; raise size or lower max_digits");
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<int> len_dist(opts.min_digits, opts.max_digits);
  std::uniform_int_distribution<int> digit_dist(0, 9);

  // Unique digit strings keep the split-by-plate guarantee meaningful.
  std::set<std::string> seen;
  std::vector<std::string> plates;
  while (static_cast<int>(plates.size()) < opts.n_plates) {
    const int len = len_dist(rng);
    std::string d;
    for (int i = 0; i < len; ++i)
      d.push_back(static_cast<char>('0' + digit_dist(rng)));
    if (seen.insert(d).second) plates.push_back(std::move(d));
  }

  const int n_train =
      static_cast<int>(std::llround(opts.n_plates * opts.split));
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "test");

  std::vector<ManifestRecord> train_recs, test_recs;
  for (int p = 0; p < opts.n_plates; ++p) {
    const bool is_train = p < n_train;
    const std::string split_dir = is_train ? "train" : "test";
    const uint64_t plate_seed = mix_seed(opts.seed, static_cast<uint64_t>(p));

    PlateSpec spec;
    spec.digits = plates[static_cast<size_t>(p)];
    spec.decoration = opts.decoration;

    char pid[16];
    std::snprintf(pid, sizeof pid, "p%04d", p);
    const std::string hq0_rel = split_dir + "/" + pid + "_hq0.ppm";
    const std::string boxes_rel = split_dir + "/" + pid + "_boxes.txt";

    bool shared_written = false;
    for (int angle : kSampleAngles) {
      TrainingSample s = generate_sample(spec, angle, opts.size, plate_seed,
                                         opts.noise_sigma);
      if (!shared_written) {
        RenderInfo info;
        Image hq0 = render_plate(spec, opts.size, plate_seed, &info);
        write_pnm((fs::path(out_dir) / hq0_rel).string(), hq0);
        write_boxes((fs::path(out_dir) / boxes_rel).string(), info.boxes);
        shared_written = true;
      }
      ManifestRecord r;
      r.id = std::string(pid) + "_" + angle_tag(angle);
      r.lq = split_dir + "/" + r.id + "_lq.ppm";
      r.hq = split_dir + "/" + r.id + "_hq.ppm";
      r.hq0 = hq0_rel;
      r.seg = split_dir + "/" + r.id + "_seg.pgm";
      r.boxes = boxes_rel;
      r.angle = angle;
      r.count = s.count;
      r.digits = spec.digits;
      write_pnm((fs::path(out_dir) / r.lq).string(), s.i_lq);
      write_pnm((fs::path(out_dir) / r.hq).string(), s.i_hq);
      write_pnm((fs::path(out_dir) / r.seg).string(), s.i_seg);
      (is_train ? train_recs : test_recs).push_back(std::move(r));
    }
  }

  const std::string train_path = (fs::path(out_dir) / "train.manifest").string();
  const std::string test_path = (fs::path(out_dir) / "test.manifest").string();
  write_manifest(train_path, opts.size, train_recs);
  write_manifest(test_path, opts.size, test_recs);
  return {train_path, test_path};
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "snider-manifest v1")
    throw std::runtime_error("read_manifest: '" + path +
                             "' missing snider-manifest v1 header");
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "size") {
      ls >> m.size;
    } else if (kind == "sample") {
      ManifestRecord r;
      if (!(ls >> r.id >> r.lq >> r.hq >> r.hq0 >> r.seg >> r.boxes >> r.angle >>
            r.count >> r.digits))
        throw std::runtime_error("read_manifest: malformed record at " + path +
                                 ":" + std::to_string(lineno));
      m.records.push_back(std::move(r));
    } else {
      throw std::runtime_error("read_manifest: unknown directive '" + kind +
                               "' at " + path + ":" + std::to_string(lineno));
    }
  }
  if (m.size <= 0)
    throw std::runtime_error("read_manifest: '" + path + "' has no size entry");
  return m;
}

TrainingSample load_sample(const std::string& manifest_dir,
                           const ManifestRecord& rec) {
  TrainingSample s;
  const fs::path base(manifest_dir);
  s.i_lq = read_pnm((base / rec.lq).string());
  s.i_hq = read_pnm((base / rec.hq).string());
  s.i_hq_0 = read_pnm((base / rec.hq0).string());
  s.i_seg = read_pnm((base / rec.seg).string());
  s.count = rec.count;
  s.angle = rec.angle;
  return s;
}

}  // namespace snider
