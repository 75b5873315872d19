#include "dfnet/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dfnet/png_io.hpp"
#include "dfnet/rng.hpp"

namespace dfnet {

namespace {

constexpr double kTau = 6.283185307179586;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

struct Background {
  double base;      // luminance
  double gradient;  // top-to-bottom luminance delta
  double tint_h;    // faint hue
};

Background sample_background(Rng& rng) {
  return {rng.uniform(0.35, 0.6), rng.uniform(-0.1, 0.1), rng.uniform()};
}

// Paints background, then distractors, then foreground shapes (topmost), and
// rasterizes the mask from foreground membership alone.
SynthFrame render_frame(int size, const Background& bg, const std::vector<EllipseSpec>& fg,
                        const std::vector<EllipseSpec>& distractors, Rng& rng) {
  std::vector<float> img(static_cast<std::size_t>(size) * size * 3);
  std::vector<float> mask(static_cast<std::size_t>(size) * size, 0.0f);
  const auto tint = hsv_to_rgb(bg.tint_h, 0.08, 1.0);
  for (int y = 0; y < size; ++y) {
    const double lum = bg.base + bg.gradient * (static_cast<double>(y) / size - 0.5);
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::array<float, 3> color = {static_cast<float>(lum * tint[0]),
                                    static_cast<float>(lum * tint[1]),
                                    static_cast<float>(lum * tint[2])};
      for (const auto& e : distractors)
        if (ellipse_contains(e, px, py)) color = e.color;
      bool inside_fg = false;
      for (const auto& e : fg)
        if (ellipse_contains(e, px, py)) {
          color = e.color;
          inside_fg = true;
        }
      const auto o = (static_cast<std::size_t>(y) * size + x) * 3;
      for (int ch = 0; ch < 3; ++ch) {
        const double noisy = color[static_cast<std::size_t>(ch)] + rng.uniform(-0.03, 0.03);
        img[o + static_cast<std::size_t>(ch)] =
            static_cast<float>(std::min(std::max(noisy, 0.0), 1.0));
      }
      if (inside_fg) mask[static_cast<std::size_t>(y) * size + x] = 1.0f;
    }
  }
  SynthFrame frame;
  frame.image = Tensor<float>({size, size, 3}, std::move(img));
  frame.mask = Tensor<float>({size, size}, std::move(mask));
  frame.foreground = fg;
  frame.distractors = distractors;
  return frame;
}

EllipseSpec sample_blob(Rng& rng, int size, double rmin_frac, double rmax_frac, double hue) {
  EllipseSpec e;
  e.rx = rng.uniform(rmin_frac, rmax_frac) * size;
  e.ry = rng.uniform(rmin_frac, rmax_frac) * size;
  e.cx = rng.uniform(0.28, 0.72) * size;
  e.cy = rng.uniform(0.28, 0.72) * size;
  e.angle = rng.uniform(0.0, kTau / 2.0);
  e.color = hsv_to_rgb(hue, rng.uniform(0.75, 0.95), rng.uniform(0.8, 1.0));
  return e;
}

std::vector<SynthGroup> gen_static(int count, int size, Rng& rng) {
  std::vector<SynthGroup> groups;
  for (int i = 0; i < count; ++i) {
    const auto bg = sample_background(rng);
    const int n_blobs = 1 + rng.uniform_int(3);
    std::vector<EllipseSpec> fg;
    for (int b = 0; b < n_blobs; ++b)
      fg.push_back(sample_blob(rng, size, 0.12, 0.24, rng.uniform()));
    SynthGroup g;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "image%04d", i);
    g.name = buf;
    g.frames.push_back(render_frame(size, bg, fg, {}, rng));
    groups.push_back(std::move(g));
  }
  return groups;
}

// One persistent object moving smoothly plus short-lived distractor blobs.
std::vector<SynthGroup> gen_moving(int count, int size, Rng& rng) {
  std::vector<SynthGroup> groups;
  for (int v = 0; v < count; ++v) {
    const auto bg = sample_background(rng);
    const int n_frames = 8 + rng.uniform_int(9);
    const double hue = rng.uniform();
    const auto color = hsv_to_rgb(hue, rng.uniform(0.8, 0.95), rng.uniform(0.85, 1.0));

    double cx = rng.uniform(0.34, 0.66) * size;
    double cy = rng.uniform(0.34, 0.66) * size;
    const double speed = rng.uniform(0.012, 0.028) * size;
    double dir = rng.uniform(0.0, kTau);
    double vx = speed * std::cos(dir), vy = speed * std::sin(dir);
    // objects large enough that sub-cell boundary placement can reach high
    // overlap at 1/8 feature resolution
    const double rx0 = rng.uniform(0.3, 0.4) * size;
    const double ry0 = rng.uniform(0.3, 0.4) * size;
    double angle = rng.uniform(0.0, kTau / 2.0);
    const double spin = rng.uniform(-0.05, 0.05);
    const double pulse_phase = rng.uniform(0.0, kTau);

    struct LiveDistractor {
      EllipseSpec e;
      int frames_left;
      double vx, vy;
    };
    std::vector<LiveDistractor> live;

    SynthGroup g;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video%04d", v);
    g.name = buf;
    const double lo = 0.26 * size, hi = 0.74 * size;
    for (int t = 0; t < n_frames; ++t) {
      const double pulse = 1.0 + 0.05 * std::sin(kTau * t / n_frames + pulse_phase);
      EllipseSpec obj{cx, cy, rx0 * pulse, ry0 * pulse, angle, color};

      // retire expired distractors, spawn new ones
      std::vector<LiveDistractor> kept;
      for (auto& d : live)
        if (d.frames_left > 0) kept.push_back(d);
      live = std::move(kept);
      const int want = rng.uniform_int(3);  // 0..2 present per frame
      while (static_cast<int>(live.size()) < want) {
        // distractors look like plausible objects (same palette, nearby
        // sizes), so a single frame cannot settle what the video's object
        // is; only the appearance recurring across frames can
        LiveDistractor d;
        d.e = sample_blob(rng, size, 0.13, 0.19, rng.uniform());
        d.frames_left = 1 + rng.uniform_int(2);
        const double ds = rng.uniform(0.0, 0.02) * size;
        const double dd = rng.uniform(0.0, kTau);
        d.vx = ds * std::cos(dd);
        d.vy = ds * std::sin(dd);
        live.push_back(d);
      }
      std::vector<EllipseSpec> distractors;
      for (auto& d : live) {
        distractors.push_back(d.e);
        d.e.cx += d.vx;
        d.e.cy += d.vy;
        --d.frames_left;
      }

      g.frames.push_back(render_frame(size, bg, {obj}, distractors, rng));

      cx += vx;
      cy += vy;
      if (cx < lo || cx > hi) { vx = -vx; cx = std::min(std::max(cx, lo), hi); }
      if (cy < lo || cy > hi) { vy = -vy; cy = std::min(std::max(cy, lo), hi); }
      angle += spin;
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

// Classes share an object hue and size range; backgrounds and poses vary.
std::vector<SynthGroup> gen_coseg(int count, int size, Rng& rng) {
  std::vector<SynthGroup> groups;
  for (int c = 0; c < count; ++c) {
    const double class_hue = rng.uniform();
    const double rmin = rng.uniform(0.18, 0.22);
    const double rmax = rmin + 0.08;
    const int n_images = 6;
    SynthGroup g;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class%04d", c);
    g.name = buf;
    for (int i = 0; i < n_images; ++i) {
      const auto bg = sample_background(rng);
      EllipseSpec obj = sample_blob(rng, size, rmin, rmax, class_hue + rng.uniform(-0.02, 0.02));
      const int n_distract = rng.uniform_int(3);
      std::vector<EllipseSpec> distractors;
      for (int d = 0; d < n_distract; ++d)
        distractors.push_back(sample_blob(rng, size, 0.12, 0.2, rng.uniform()));
      g.frames.push_back(render_frame(size, bg, {obj}, distractors, rng));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "static_blobs") return SynthKind::static_blobs;
  if (name == "moving_blobs") return SynthKind::moving_blobs;
  if (name == "coseg_groups") return SynthKind::coseg_groups;
  throw ValueError("unknown synthetic dataset kind '" + name + "'");
}

bool ellipse_contains(const EllipseSpec& e, double px, double py) {
  const double dx = px - e.cx, dy = py - e.cy;
  const double ca = std::cos(e.angle), sa = std::sin(e.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  return (u / e.rx) * (u / e.rx) + (v / e.ry) * (v / e.ry) <= 1.0;
}

std::vector<SynthGroup> gen_synthetic(SynthKind kind, int count, int size, std::uint64_t seed) {
  check_value(size >= 32 && size % 8 == 0,
              "synthetic size must be a multiple of 8 and at least 32, got " +
                  std::to_string(size));
  check_value(count >= 1, "synthetic count must be positive");
  Rng rng(seed);
  switch (kind) {
    case SynthKind::static_blobs: return gen_static(count, size, rng);
    case SynthKind::moving_blobs: return gen_moving(count, size, rng);
    case SynthKind::coseg_groups: return gen_coseg(count, size, rng);
  }
  throw ValueError("unreachable synthetic kind");
}

void write_dataset(const std::vector<SynthGroup>& groups, const std::string& root) {
  namespace fs = std::filesystem;
  for (const auto& g : groups) {
    const fs::path dir = fs::path(root) / g.name;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    for (std::size_t i = 0; i < g.frames.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%05zu.png", i);
      write_png_rgb8((dir / "frames" / buf).string(), g.frames[i].image);
      write_png_gray8((dir / "masks" / buf).string(), g.frames[i].mask);
    }
  }
}

}  // namespace dfnet
