#pragma once

// Synthetic paragraph rendering from a 5x7 bitmap font, PGM and manifest
// I/O, input normalization and projection-profile line segmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scribe/alphabet.hpp"
#include "scribe/layers.hpp"
#include "scribe/parameter.hpp"

namespace scribe {

// ---------------------------------------------------------------------------
// font

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = kGlyphWidth + 1;

struct FontGlyph {
  std::string symbol;
  std::array<const char*, kGlyphHeight> rows;

  bool ink(int y, int x) const { return rows[static_cast<std::size_t>(y)][x] == '#'; }
};

// clang-format off
inline const std::vector<FontGlyph>& font() {
  static const std::vector<FontGlyph> glyphs = {
      {" ", {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
      {"0", {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {"1", {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {"2", {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {"3", {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
      {"4", {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {"5", {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {"6", {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {"7", {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
      {"8", {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {"9", {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
      {"A", {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {"B", {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
      {"C", {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
      {"D", {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."}},
      {"E", {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
      {"F", {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
      {"G", {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
      {"H", {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {"I", {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {"J", {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
      {"K", {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
      {"L", {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
      {"M", {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
      {"N", {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
      {"O", {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {"P", {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
      {"Q", {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
      {"R", {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
      {"S", {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
      {"T", {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
      {"U", {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {"V", {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
      {"W", {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
      {"X", {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
      {"Y", {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
      {"Z", {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
      {".", {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
      {",", {".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."}},
      {"-", {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
  };
  return glyphs;
}
// clang-format on

inline const FontGlyph* find_glyph(const std::string& symbol) {
  for (const auto& g : font())
    if (g.symbol == symbol) return &g;
  return nullptr;
}

// ---------------------------------------------------------------------------
// samples

/// Inclusive pixel bounds.
struct LineBox {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
  bool operator==(const LineBox&) const = default;
  int height() const { return bottom - top + 1; }
};

struct ParagraphSample {
  ImagePlane image;                // raw grayscale, 0 = ink, 255 = background
  std::vector<std::string> lines;  // one transcript per text line
  std::vector<LineBox> boxes;      // empty when unknown

  std::string transcript(const std::string& separator = " ") const {
    std::string out;
    for (std::size_t k = 0; k < lines.size(); ++k) {
      if (k) out += separator;
      out += lines[k];
    }
    return out;
  }

  bool operator==(const ParagraphSample&) const = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool operator==(const IntRange&) const = default;
  bool valid() const { return lo <= hi; }
};

/// Generator settings. Jitter, gaps and margins are in font pixels and get
/// multiplied by `scale`.
struct GenSpec {
  std::string alphabet = "0123456789 ";
  IntRange lines{3, 3};
  IntRange chars{4, 8};
  int scale = 2;
  IntRange jitter{0, 1};
  IntRange line_gap{2, 4};
  double noise = 0.0;
  int margin = 2;
  std::uint64_t seed = 0;

  bool operator==(const GenSpec&) const = default;

  void validate() const {
    if (!lines.valid() || lines.lo < 1) throw ConfigError("gen: lines range must be >= 1");
    if (!chars.valid() || chars.lo < 1) throw ConfigError("gen: chars range must be >= 1");
    if (!jitter.valid()) throw ConfigError("gen: empty jitter range");
    if (!line_gap.valid()) throw ConfigError("gen: empty line-gap range");
    if (scale < 1) throw ConfigError("gen: scale must be >= 1");
    if (noise < 0.0) throw ConfigError("gen: noise must be >= 0");
    if (margin < 0) throw ConfigError("gen: margin must be >= 0");
    Alphabet a(alphabet);
    bool printable = false;
    for (const auto& s : a.symbols()) {
      if (!find_glyph(s)) throw ConfigError("gen: no glyph for symbol '" + s + "'");
      if (s != " ") printable = true;
    }
    if (!printable) throw ConfigError("gen: alphabet has no printable symbol");
  }
};

/// Renders one paragraph; fully determined by `spec` and `index` (the sample
/// number within a corpus, mixed into the seed).
inline ParagraphSample generate_paragraph(const GenSpec& spec, std::uint64_t index = 0) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, index));
  const Alphabet alphabet(spec.alphabet);
  std::vector<const FontGlyph*> printable;
  for (const auto& s : alphabet.symbols())
    if (s != " ") printable.push_back(find_glyph(s));

  struct Placed {
    const FontGlyph* glyph;
    int x, y;  // font pixels
  };
  const int n_lines = static_cast<int>(rng.integer(spec.lines.lo, spec.lines.hi));
  const int cell_height = kGlyphHeight + (spec.jitter.hi - spec.jitter.lo);
  std::vector<std::vector<Placed>> placed(static_cast<std::size_t>(n_lines));
  ParagraphSample sample;
  int top = spec.margin;
  int max_bottom = 0;
  for (int l = 0; l < n_lines; ++l) {
    if (l > 0) top += cell_height + static_cast<int>(rng.integer(spec.line_gap.lo, spec.line_gap.hi));
    top = std::max(top, 0);
    const int n_chars = static_cast<int>(rng.integer(spec.chars.lo, spec.chars.hi));
    std::string text;
    for (int c = 0; c < n_chars; ++c) {
      const auto* g = printable[static_cast<std::size_t>(
          rng.integer(0, static_cast<long long>(printable.size()) - 1))];
      const int dy = static_cast<int>(rng.integer(spec.jitter.lo, spec.jitter.hi)) - spec.jitter.lo;
      placed[static_cast<std::size_t>(l)].push_back({g, spec.margin + c * kGlyphAdvance, top + dy});
      text += g->symbol;
    }
    sample.lines.push_back(text);
    max_bottom = std::max(max_bottom, top + cell_height);
  }
  const int s = spec.scale;
  const int width = (2 * spec.margin + spec.chars.hi * kGlyphAdvance - 1) * s;
  const int height = (max_bottom + spec.margin) * s;
  sample.image = ImagePlane(static_cast<std::size_t>(height), static_cast<std::size_t>(width), 1, 255.0);

  for (const auto& line : placed) {
    LineBox box{height, -1, width, -1};
    for (const auto& p : line) {
      for (int gy = 0; gy < kGlyphHeight; ++gy)
        for (int gx = 0; gx < kGlyphWidth; ++gx) {
          if (!p.glyph->ink(gy, gx)) continue;
          const int py = (p.y + gy) * s, px = (p.x + gx) * s;
          for (int sy = 0; sy < s; ++sy)
            for (int sx = 0; sx < s; ++sx)
              sample.image.at(static_cast<std::size_t>(py + sy), static_cast<std::size_t>(px + sx)) = 0.0;
          box.top = std::min(box.top, py);
          box.bottom = std::max(box.bottom, py + s - 1);
          box.left = std::min(box.left, px);
          box.right = std::max(box.right, px + s - 1);
        }
    }
    sample.boxes.push_back(box);
  }
  if (spec.noise > 0.0) {
    for (auto& v : sample.image.tensor()->data())
      v = std::clamp(std::round(v + rng.uniform(-spec.noise, spec.noise)), 0.0, 255.0);
  }
  return sample;
}

/// True when some pair of consecutive lines has no blank row between their
/// boxes.
inline bool has_touching_lines(const ParagraphSample& s) {
  for (std::size_t k = 1; k < s.boxes.size(); ++k)
    if (s.boxes[k].top <= s.boxes[k - 1].bottom + 1) return true;
  return false;
}

/// `count` samples with indices first, first+1, ...; a `touching` fraction of
/// them, spread evenly, are drawn with `touching_gap` as the line gap.
inline std::vector<ParagraphSample> generate_corpus(const GenSpec& spec, std::uint64_t first,
                                                    std::size_t count, double touching = 0.0,
                                                    IntRange touching_gap = {-1, 0}) {
  if (touching < 0.0 || touching > 1.0) throw ConfigError("gen: touching fraction must be in [0, 1]");
  GenSpec touching_spec = spec;
  touching_spec.line_gap = touching_gap;
  spec.validate();
  touching_spec.validate();
  std::vector<ParagraphSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const bool touch = std::floor(static_cast<double>(k + 1) * touching) >
                       std::floor(static_cast<double>(k) * touching);
    out.push_back(generate_paragraph(touch ? touching_spec : spec, first + k));
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

/// Zero mean, unit variance (divisor 1 when the deviation is below 1e-8).
inline ImagePlane normalize(const ImagePlane& image) {
  ImagePlane out(image.height(), image.width(), image.channels());
  const auto src = image.tensor()->data();
  auto dst = out.tensor()->data();
  const double n = static_cast<double>(src.size());
  double mean = 0.0;
  for (double v : src) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : src) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);
  const double div = sd < 1e-8 ? 1.0 : sd;
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = (src[k] - mean) / div;
  return out;
}

// ---------------------------------------------------------------------------
// cropping

/// Rows [top, bottom] (clamped) of the image, full width.
inline ImagePlane crop_rows(const ImagePlane& image, int top, int bottom) {
  top = std::max(top, 0);
  bottom = std::min(bottom, static_cast<int>(image.height()) - 1);
  if (bottom < top) throw DimensionError("crop_rows: empty crop");
  ImagePlane out(static_cast<std::size_t>(bottom - top + 1), image.width(), image.channels());
  for (int y = top; y <= bottom; ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < image.channels(); ++c)
        out.at(static_cast<std::size_t>(y - top), x, c) = image.at(static_cast<std::size_t>(y), x, c);
  return out;
}

/// Windows of `max_lines` consecutive lines, cut halfway between the window
/// edges and the neighbouring lines. Samples without boxes, or with no more
/// lines than `max_lines`, are returned whole.
inline std::vector<ParagraphSample> line_windows(const ParagraphSample& s, std::size_t max_lines) {
  const std::size_t n = s.lines.size();
  if (max_lines == 0 || n <= max_lines || s.boxes.size() != n) return {s};
  std::vector<ParagraphSample> out;
  const int H = static_cast<int>(s.image.height());
  for (std::size_t first = 0; first + max_lines <= n; ++first) {
    const std::size_t last = first + max_lines - 1;
    const int top = first == 0 ? 0 : (s.boxes[first - 1].bottom + s.boxes[first].top + 1) / 2;
    const int bottom = last + 1 == n ? H - 1 : (s.boxes[last].bottom + s.boxes[last + 1].top) / 2;
    ParagraphSample w;
    w.image = crop_rows(s.image, top, std::max(bottom, top));
    for (std::size_t k = first; k <= last; ++k) {
      w.lines.push_back(s.lines[k]);
      LineBox b = s.boxes[k];
      b.top = std::max(b.top - top, 0);
      b.bottom = std::min(b.bottom - top, static_cast<int>(w.image.height()) - 1);
      w.boxes.push_back(b);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM

inline void write_pgm(const std::filesystem::path& path, const ImagePlane& image) {
  if (image.channels() != 1) throw IoError("write_pgm: expects a single channel");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  std::string row(image.width(), '\0');
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x)
      row[x] = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(image.at(y, x)), 0L, 255L)));
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

/// Binary PNM with 8-bit RGB pixels.
inline void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      const std::vector<std::array<unsigned char, 3>>& rgb) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << width << " " << height << "\n255\n";
  for (const auto& px : rgb) os.write(reinterpret_cast<const char*>(px.data()), 3);
  if (!os) throw IoError("failed writing " + path.string());
}

namespace detail {

inline std::string pnm_token(std::istream& is, const std::string& path) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += c;
  }
  if (tok.empty()) throw IoError("truncated PGM header in " + path);
  return tok;
}

}  // namespace detail

inline ImagePlane read_pgm(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + p);
  if (detail::pnm_token(is, p) != "P5") throw IoError("not a binary PGM (P5): " + p);
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::pnm_token(is, p));
    h = std::stoul(detail::pnm_token(is, p));
    maxval = std::stoul(detail::pnm_token(is, p));
  } catch (const std::logic_error&) {
    throw IoError("malformed PGM header in " + p);
  }
  if (maxval == 0 || maxval > 255) throw IoError("unsupported PGM maxval in " + p);
  ImagePlane image(h, w, 1);
  std::string buf(w * h, '\0');
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw IoError("truncated PGM pixel data in " + p);
  }
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t k = 0; k < buf.size(); ++k)
    (*image.tensor())[k] = static_cast<unsigned char>(buf[k]) * scale;
  return image;
}

// ---------------------------------------------------------------------------
// dataset files
//
// Manifest: one record per line, `<image>\t<transcript>[\t<boxes>]`, paths
// relative to the manifest's directory. Transcripts hold one text line per
// line; the optional boxes file holds `top bottom left right` per line.

inline void save_dataset(const std::filesystem::path& dir,
                         const std::vector<ParagraphSample>& samples,
                         const std::string& manifest_name = "manifest.tsv") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir / manifest_name, std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << k;
    const auto& s = samples[k];
    write_pgm(dir / (stem.str() + ".pgm"), s.image);
    {
      std::ofstream t(dir / (stem.str() + ".txt"), std::ios::trunc);
      for (const auto& line : s.lines) t << line << "\n";
    }
    manifest << stem.str() << ".pgm\t" << stem.str() << ".txt";
    if (!s.boxes.empty()) {
      std::ofstream b(dir / (stem.str() + ".box"), std::ios::trunc);
      for (const auto& box : s.boxes)
        b << box.top << " " << box.bottom << " " << box.left << " " << box.right << "\n";
      manifest << "\t" << stem.str() << ".box";
    }
    manifest << "\n";
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

/// Reads every manifest record in order. Transcripts are validated against
/// `alphabet`.
inline std::vector<ParagraphSample> load_dataset(const std::filesystem::path& manifest_path,
                                                 const Alphabet& alphabet) {
  namespace fs = std::filesystem;
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open manifest " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&base](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<ParagraphSample> out;
  std::string record;
  std::size_t line_no = 0;
  while (std::getline(manifest, record)) {
    ++line_no;
    if (!record.empty() && record.back() == '\r') record.pop_back();
    if (record.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(record);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 3) {
      throw IoError(detail::concat(manifest_path.string(), ":", line_no,
                                   ": expected <image>\\t<transcript>[\\t<boxes>]"));
    }
    ParagraphSample s;
    s.image = read_pgm(resolve(fields[0]));
    const auto tpath = resolve(fields[1]);
    std::ifstream t(tpath);
    if (!t) throw IoError("cannot open transcript " + tpath.string());
    std::string line;
    while (std::getline(t, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      for (const auto& sym : split_utf8(line)) {
        if (!alphabet.contains(sym)) {
          throw IoError("transcript " + tpath.string() + " contains symbol '" + sym +
                        "' outside the alphabet");
        }
      }
      s.lines.push_back(line);
    }
    if (fields.size() == 3) {
      const auto bpath = resolve(fields[2]);
      std::ifstream b(bpath);
      if (!b) throw IoError("cannot open boxes " + bpath.string());
      LineBox box;
      while (b >> box.top >> box.bottom >> box.left >> box.right) s.boxes.push_back(box);
      if (s.boxes.size() != s.lines.size()) {
        throw IoError(detail::concat("boxes file ", bpath.string(), " has ", s.boxes.size(),
                                     " boxes for ", s.lines.size(), " lines"));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// projection-profile segmentation

struct ProjectionConfig {
  double threshold = 0.05;  // fraction of the profile maximum
  int min_height = 3;       // rows; callers scale it with the render scale
};

/// Row ink profile (background brightness minus pixel value, summed per row);
/// rows under threshold * max are gaps, maximal runs of other rows are lines.
inline std::vector<LineBox> projection_segment(const ImagePlane& image,
                                               const ProjectionConfig& cfg = {}) {
  const std::size_t H = image.height(), W = image.width();
  double background = 0.0;
  for (double v : image.tensor()->data()) background = std::max(background, v);
  std::vector<double> profile(H, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) profile[y] += std::max(background - image.at(y, x), 0.0);
  const double peak = *std::max_element(profile.begin(), profile.end());
  std::vector<LineBox> boxes;
  if (peak <= 0.0) return boxes;
  const double cut = cfg.threshold * peak;
  const double ink_cut = 0.5 * background;
  std::size_t y = 0;
  while (y < H) {
    if (profile[y] < cut) {
      ++y;
      continue;
    }
    const std::size_t start = y;
    while (y < H && profile[y] >= cut) ++y;
    const int top = static_cast<int>(start), bottom = static_cast<int>(y) - 1;
    if (bottom - top + 1 < cfg.min_height) continue;
    LineBox box{top, bottom, static_cast<int>(W) - 1, 0};
    for (int r = top; r <= bottom; ++r)
      for (std::size_t x = 0; x < W; ++x)
        if (background - image.at(static_cast<std::size_t>(r), x) >= ink_cut) {
          box.left = std::min(box.left, static_cast<int>(x));
          box.right = std::max(box.right, static_cast<int>(x));
        }
    if (box.right < box.left) {
      box.left = 0;
      box.right = static_cast<int>(W) - 1;
    }
    boxes.push_back(box);
  }
  return boxes;
}

}  // namespace scribe
