#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "wildnet/datapipe.hpp"

namespace wildnet {

namespace {

struct Rgb {
  float r = 0, g = 0, b = 0;
};

Rgb lerp(const Rgb& a, const Rgb& b, float t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

/// Appearance of one domain: background gradient colors, a (light, dark)
/// color pair per foreground class, and pixel noise.
struct Style {
  Rgb bg_a, bg_b;
  std::vector<std::pair<Rgb, Rgb>> fg;
  float noise = 0.02f;
};

enum class Shape { Ellipse, Rectangle, Triangle, Ring, Cross };
enum class Pattern { HStripes, VStripes, Checker, Diagonal, Dots, Solid };

/// Class c (1-based) is defined by its fill pattern; the outline shape is
/// drawn independently of the class.
Pattern class_pattern(std::int32_t c) {
  static constexpr std::array<Pattern, 5> kPatterns{Pattern::HStripes, Pattern::VStripes, Pattern::Checker,
                                                    Pattern::Diagonal, Pattern::Dots};
  return kPatterns[static_cast<std::size_t>(c - 1) % kPatterns.size()];
}

struct Object {
  std::int32_t cls = 0;
  Pattern pattern = Pattern::Solid;
  Shape shape = Shape::Ellipse;
  double cy = 0, cx = 0, ry = 0, rx = 0;
  int period = 6;
  int phase_y = 0, phase_x = 0;
  std::size_t palette_slot = 0;
};

struct Layout {
  std::vector<Object> objects;
  double bg_angle = 0;
};

bool inside(const Object& o, double y, double x) {
  const double dy = (y - o.cy) / o.ry;
  const double dx = (x - o.cx) / o.rx;
  switch (o.shape) {
    case Shape::Ellipse: return dy * dy + dx * dx <= 1.0;
    case Shape::Rectangle: return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    case Shape::Triangle: return dy <= 1.0 && dy >= -1.0 && std::abs(dx) <= (dy + 1.0) * 0.5;
    case Shape::Ring: {
      const double r2 = dy * dy + dx * dx;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case Shape::Cross: return (std::abs(dy) <= 1.0 && std::abs(dx) <= 0.35) || (std::abs(dx) <= 1.0 && std::abs(dy) <= 0.35);
  }
  return false;
}

float pattern_value(const Object& o, Index y, Index x) {
  const int p = o.period;
  const int yy = static_cast<int>(y) + o.phase_y;
  const int xx = static_cast<int>(x) + o.phase_x;
  switch (o.pattern) {
    case Pattern::HStripes: return (yy % p) < p / 2 ? 1.0f : 0.0f;
    case Pattern::VStripes: return (xx % p) < p / 2 ? 1.0f : 0.0f;
    case Pattern::Checker: return ((yy / (p / 2)) + (xx / (p / 2))) % 2 == 0 ? 1.0f : 0.0f;
    case Pattern::Diagonal: return ((yy + xx) % p) < p / 2 ? 1.0f : 0.0f;
    case Pattern::Dots: {
      const int my = yy % p - p / 2;
      const int mx = xx % p - p / 2;
      return my * my + mx * mx <= (p * p) / 9 ? 0.0f : 1.0f;
    }
    case Pattern::Solid: return 1.0f;
  }
  return 1.0f;
}

Layout random_layout(std::mt19937_64& rng, std::int32_t classes, Index size, bool novel) {
  std::uniform_int_distribution<int> count(2, 4);
  std::uniform_int_distribution<std::int32_t> cls(1, classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> phase(0, 11);
  Layout layout;
  layout.bg_angle = unit(rng) * 6.283185307179586;
  const int n = count(rng);
  const double s = static_cast<double>(size);
  for (int i = 0; i < n; ++i) {
    Object o;
    o.cls = cls(rng);
    o.pattern = class_pattern(o.cls);
    const int shape_count = novel ? 5 : 3;
    o.shape = static_cast<Shape>(std::uniform_int_distribution<int>(0, shape_count - 1)(rng));
    if (novel && unit(rng) < 0.5) {
      o.pattern = static_cast<Pattern>(std::uniform_int_distribution<int>(0, 5)(rng));
    }
    o.ry = s * (0.12 + 0.12 * unit(rng));
    o.rx = s * (0.12 + 0.12 * unit(rng));
    o.cy = o.ry * 0.5 + unit(rng) * (s - o.ry);
    o.cx = o.rx * 0.5 + unit(rng) * (s - o.rx);
    o.period = 6;
    o.phase_y = phase(rng);
    o.phase_x = phase(rng);
    o.palette_slot = static_cast<std::size_t>(o.cls - 1);
    layout.objects.push_back(o);
  }
  return layout;
}

void render(const Layout& layout, const Style& style, Index size, std::mt19937_64& rng, Image& image,
            LabelGrid* label) {
  image = Image(3, size, size);
  if (label) *label = LabelGrid::Zero(size, size);
  std::normal_distribution<float> noise(0.0f, style.noise);
  const double ca = std::cos(layout.bg_angle);
  const double sa = std::sin(layout.bg_angle);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((static_cast<double>(y) / size - 0.5) * ca + (static_cast<double>(x) / size - 0.5) * sa);
      Rgb px = lerp(style.bg_a, style.bg_b, static_cast<float>(std::clamp(t, 0.0, 1.0)));
      std::int32_t id = 0;
      for (const Object& o : layout.objects) {
        if (!inside(o, static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5)) continue;
        const auto& pair = style.fg[o.palette_slot % style.fg.size()];
        px = lerp(pair.second, pair.first, pattern_value(o, y, x));
        id = o.cls;
      }
      image(0, y, x) = std::clamp(px.r + noise(rng), 0.0f, 1.0f);
      image(1, y, x) = std::clamp(px.g + noise(rng), 0.0f, 1.0f);
      image(2, y, x) = std::clamp(px.b + noise(rng), 0.0f, 1.0f);
      if (label) (*label)(y, x) = id;
    }
  }
}

/// Source look: saturated, class-specific hues on a neutral background.
Style source_style() {
  Style s;
  s.bg_a = {0.32f, 0.33f, 0.36f};
  s.bg_b = {0.46f, 0.46f, 0.48f};
  s.fg = {{{0.92f, 0.25f, 0.18f}, {0.55f, 0.06f, 0.05f}},
          {{0.25f, 0.88f, 0.25f}, {0.05f, 0.45f, 0.10f}},
          {{0.25f, 0.35f, 0.95f}, {0.05f, 0.10f, 0.50f}},
          {{0.95f, 0.90f, 0.25f}, {0.50f, 0.45f, 0.05f}},
          {{0.90f, 0.30f, 0.90f}, {0.45f, 0.10f, 0.45f}}};
  s.noise = 0.02f;
  return s;
}

/// Unseen looks keep the patterns but change hue, contrast and noise so the
/// source hue cue no longer identifies the class.
Style unseen_style(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> jitter(-0.04f, 0.04f);
  Style s;
  switch (d % 3) {
    case 0:  // warm, desaturated, bright background
      s.bg_a = {0.78f, 0.72f, 0.60f};
      s.bg_b = {0.88f, 0.82f, 0.70f};
      s.fg = {{{0.75f, 0.62f, 0.45f}, {0.35f, 0.25f, 0.15f}},
              {{0.70f, 0.55f, 0.50f}, {0.30f, 0.20f, 0.18f}},
              {{0.72f, 0.66f, 0.40f}, {0.32f, 0.28f, 0.12f}},
              {{0.65f, 0.60f, 0.55f}, {0.28f, 0.24f, 0.20f}},
              {{0.78f, 0.58f, 0.52f}, {0.36f, 0.22f, 0.20f}}};
      s.noise = 0.04f;
      break;
    case 1:  // dark, blue cast, low contrast, noisy
      s.bg_a = {0.06f, 0.08f, 0.16f};
      s.bg_b = {0.12f, 0.14f, 0.24f};
      s.fg = {{{0.40f, 0.48f, 0.70f}, {0.12f, 0.16f, 0.32f}},
              {{0.35f, 0.50f, 0.62f}, {0.10f, 0.18f, 0.28f}},
              {{0.45f, 0.42f, 0.72f}, {0.14f, 0.12f, 0.34f}},
              {{0.38f, 0.55f, 0.55f}, {0.12f, 0.20f, 0.22f}},
              {{0.50f, 0.45f, 0.65f}, {0.16f, 0.14f, 0.30f}}};
      s.noise = 0.06f;
      break;
    default:  // hue-shuffled saturated palette
      s.bg_a = {0.20f, 0.45f, 0.35f};
      s.bg_b = {0.30f, 0.55f, 0.42f};
      s.fg = {{{0.30f, 0.80f, 0.90f}, {0.05f, 0.35f, 0.45f}},
              {{0.95f, 0.60f, 0.20f}, {0.50f, 0.25f, 0.05f}},
              {{0.85f, 0.30f, 0.60f}, {0.40f, 0.08f, 0.25f}},
              {{0.60f, 0.90f, 0.50f}, {0.20f, 0.45f, 0.15f}},
              {{0.90f, 0.90f, 0.90f}, {0.30f, 0.30f, 0.30f}}};
      s.noise = 0.03f;
      break;
  }
  auto jit = [&](Rgb& c) {
    c.r = std::clamp(c.r + jitter(rng), 0.0f, 1.0f);
    c.g = std::clamp(c.g + jitter(rng), 0.0f, 1.0f);
    c.b = std::clamp(c.b + jitter(rng), 0.0f, 1.0f);
  };
  jit(s.bg_a);
  jit(s.bg_b);
  for (auto& p : s.fg) {
    jit(p.first);
    jit(p.second);
  }
  return s;
}

Style random_style(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  auto color = [&] { return Rgb{unit(rng), unit(rng), unit(rng)}; };
  Style s;
  s.bg_a = color();
  s.bg_b = lerp(s.bg_a, color(), 0.4f);
  for (int i = 0; i < 5; ++i) {
    const Rgb light = color();
    const float k = 0.25f + 0.4f * unit(rng);
    s.fg.push_back({light, Rgb{light.r * k, light.g * k, light.b * k}});
  }
  s.noise = 0.01f + 0.06f * unit(rng);
  return s;
}

std::string stem_for(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05zu", prefix, i);
  return buf;
}

}  // namespace

SynthData synth_toy(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > 6) throw ConfigError("datapipe", "synthetic class count must be in [2, 6]");
  if (cfg.size < 16) throw ConfigError("datapipe", "synthetic image size must be at least 16");
  if (cfg.source_train == 0 || cfg.wild == 0) {
    throw ConfigError("datapipe", "synthetic source and wild sets must be non-empty");
  }
  SynthData out;
  out.source = Dataset("source", DatasetRole::Source);
  out.source_val = Dataset("source_val", DatasetRole::Eval);
  out.wild = Dataset("wild", DatasetRole::Wild);

  const Style src_style = source_style();
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 100));
    for (std::size_t i = 0; i < cfg.source_train; ++i) {
      Image img;
      LabelGrid label;
      render(random_layout(rng, cfg.classes, cfg.size, false), src_style, cfg.size, rng, img, &label);
      out.source.add(stem_for("src", i), std::move(img), std::move(label));
    }
  }
  // Evaluation domains share their layouts: content is fixed, style varies.
  std::vector<Layout> eval_layouts;
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 200));
    for (std::size_t i = 0; i < cfg.eval_per_domain; ++i) {
      eval_layouts.push_back(random_layout(rng, cfg.classes, cfg.size, false));
    }
  }
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 300));
    for (std::size_t i = 0; i < eval_layouts.size(); ++i) {
      Image img;
      LabelGrid label;
      render(eval_layouts[i], src_style, cfg.size, rng, img, &label);
      out.source_val.add(stem_for("val", i), std::move(img), std::move(label));
    }
  }
  for (std::size_t d = 0; d < cfg.unseen_domains; ++d) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 400 + d));
    const Style style = unseen_style(d, rng);
    Dataset ds("unseen" + std::to_string(d + 1), DatasetRole::Eval);
    for (std::size_t i = 0; i < eval_layouts.size(); ++i) {
      Image img;
      LabelGrid label;
      render(eval_layouts[i], style, cfg.size, rng, img, &label);
      ds.add(stem_for("img", i), std::move(img), std::move(label));
    }
    out.unseen.push_back(std::move(ds));
  }
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 500));
    for (std::size_t i = 0; i < cfg.wild; ++i) {
      const Style style = random_style(rng);
      Layout layout = random_layout(rng, 6, cfg.size, true);
      for (auto& o : layout.objects) o.palette_slot = static_cast<std::size_t>(o.cls - 1);
      Image img;
      render(layout, style, cfg.size, rng, img, nullptr);
      out.wild.add(stem_for("wild", i), std::move(img));
    }
  }
  return out;
}

}  // namespace wildnet
