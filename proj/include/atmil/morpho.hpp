#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "atmil/errors.hpp"
#include "atmil/rng.hpp"

namespace atmil {

// Procedural digit-like strokes and the three morphological perturbations
// used to mimic disease patterns on them: fragmentation (inactive), local
// thickening (focal) and global plus local thickening (diffuse). Images are
// binary 28x28 grids; pixel values live in [0,1] with 0.5 as the foreground
// threshold everywhere.

constexpr int kDigitSize = 28;

struct DigitImage {
  int height = kDigitSize;
  int width = kDigitSize;
  std::vector<double> pixels;                   // row-major, [0,1]
  std::vector<std::pair<int, int>> skeleton;    // (y,x) centerline, in stroke order;
                                                // empty for images loaded from files

  double at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  void set(int y, int x, double v) { pixels[static_cast<size_t>(y) * width + x] = v; }
  bool fg(int y, int x) const { return at(y, x) > 0.5; }

  int foreground_count() const {
    int n = 0;
    for (double p : pixels) n += p > 0.5 ? 1 : 0;
    return n;
  }
};

enum class PerturbClass : uint8_t { healthy = 0, inactive = 1, focal = 2, diffuse = 3 };

inline const char* perturb_name(PerturbClass c) {
  switch (c) {
    case PerturbClass::healthy: return "healthy";
    case PerturbClass::inactive: return "inactive";
    case PerturbClass::focal: return "focal";
    case PerturbClass::diffuse: return "diffuse";
  }
  return "?";
}

inline PerturbClass parse_perturb(const std::string& s) {
  for (PerturbClass c : {PerturbClass::healthy, PerturbClass::inactive, PerturbClass::focal,
                         PerturbClass::diffuse})
    if (s == perturb_name(c)) return c;
  throw ConfigError("unknown perturbation class '" + s + "'");
}

/// Connected foreground components at threshold 0.5, 4- or 8-connectivity.
/// Iterative BFS flood fill.
inline int count_components(const std::vector<double>& pixels, int h, int w, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw UsageError("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  std::vector<uint8_t> seen(static_cast<size_t>(h) * w, 0);
  std::vector<int> queue;
  int components = 0;
  const int dy4[] = {-1, 1, 0, 0}, dx4[] = {0, 0, -1, 1};
  const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1}, dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  const int* dy = connectivity == 4 ? dy4 : dy8;
  const int* dx = connectivity == 4 ? dx4 : dx8;
  int nn = connectivity;
  for (int start = 0; start < h * w; ++start) {
    if (seen[static_cast<size_t>(start)] || pixels[static_cast<size_t>(start)] <= 0.5) continue;
    ++components;
    seen[static_cast<size_t>(start)] = 1;
    queue.assign(1, start);
    while (!queue.empty()) {
      int cur = queue.back();
      queue.pop_back();
      int y = cur / w, x = cur % w;
      for (int k = 0; k < nn; ++k) {
        int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        int ni = ny * w + nx;
        if (!seen[static_cast<size_t>(ni)] && pixels[static_cast<size_t>(ni)] > 0.5) {
          seen[static_cast<size_t>(ni)] = 1;
          queue.push_back(ni);
        }
      }
    }
  }
  return components;
}

inline int count_components(const DigitImage& img, int connectivity = 8) {
  return count_components(img.pixels, img.height, img.width, connectivity);
}

namespace detail {

/// One pass of binary dilation with a full 3x3 structuring element.
inline std::vector<double> dilate3x3(const std::vector<double>& src, int h, int w) {
  std::vector<double> out(src.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (src[static_cast<size_t>(y) * w + x] <= 0.5) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < h && nx >= 0 && nx < w) {
            double& o = out[static_cast<size_t>(ny) * w + nx];
            o = std::max(o, src[static_cast<size_t>(y) * w + x]);
          }
        }
    }
  // dilation is extensive: keep original values where brighter
  for (size_t i = 0; i < src.size(); ++i) out[i] = std::max(out[i], src[i]);
  return out;
}

/// Dilation applied only inside a disk: out = img | (dilate(img) & disk).
inline void dilate_in_disk(DigitImage& img, int cy, int cx, double radius) {
  std::vector<double> grown = dilate3x3(img.pixels, img.height, img.width);
  double r2 = radius * radius;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double d2 = static_cast<double>(y - cy) * (y - cy) + static_cast<double>(x - cx) * (x - cx);
      if (d2 <= r2)
        img.set(y, x, std::max(img.at(y, x), grown[static_cast<size_t>(y) * img.width + x]));
    }
}

inline void draw_thick_point(DigitImage& img, int y, int x, int thickness) {
  for (int dy = 0; dy < thickness; ++dy)
    for (int dx = 0; dx < thickness; ++dx) {
      int ny = y + dy, nx = x + dx;
      if (ny >= 0 && ny < img.height && nx >= 0 && nx < img.width) img.set(ny, nx, 1.0);
    }
}

/// Bresenham segment; appends the visited centerline points in order.
inline void draw_segment(DigitImage& img, int y0, int x0, int y1, int x1, int thickness,
                         std::vector<std::pair<int, int>>& skeleton) {
  int dy = std::abs(y1 - y0), dx = std::abs(x1 - x0);
  int sy = y0 < y1 ? 1 : -1, sx = x0 < x1 ? 1 : -1;
  int err = dx - dy;
  int y = y0, x = x0;
  while (true) {
    if (skeleton.empty() || skeleton.back() != std::make_pair(y, x)) skeleton.emplace_back(y, x);
    draw_thick_point(img, y, x, thickness);
    if (y == y1 && x == x1) break;
    int e2 = 2 * err;
    if (e2 > -dy) {
      err -= dy;
      x += sx;
    }
    if (e2 < dx) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace detail

/// A random connected stroke figure: 3-5 polyline segments through control
/// points in the central region, sometimes closed into a loop, thickness 1
/// or 2 px, recentered on its bounding box. Always a single 8-connected
/// component with a recorded centerline.
inline DigitImage gen_stroke_digit(Rng& rng) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    DigitImage img;
    img.pixels.assign(static_cast<size_t>(kDigitSize) * kDigitSize, 0.0);

    int points = static_cast<int>(rng.uniform_int(4, 6));
    std::vector<std::pair<int, int>> ctrl;
    while (static_cast<int>(ctrl.size()) < points) {
      int y = static_cast<int>(rng.uniform_int(7, 20));
      int x = static_cast<int>(rng.uniform_int(7, 20));
      if (!ctrl.empty()) {
        int py = ctrl.back().first, px = ctrl.back().second;
        int d2 = (y - py) * (y - py) + (x - px) * (x - px);
        if (d2 < 25) continue;  // keep segments at least 5 px long
      }
      ctrl.emplace_back(y, x);
    }
    bool closed = rng.bernoulli(0.3);
    int thickness = rng.bernoulli(0.5) ? 2 : 1;

    for (size_t i = 0; i + 1 < ctrl.size(); ++i)
      detail::draw_segment(img, ctrl[i].first, ctrl[i].second, ctrl[i + 1].first,
                           ctrl[i + 1].second, thickness, img.skeleton);
    if (closed)
      detail::draw_segment(img, ctrl.back().first, ctrl.back().second, ctrl.front().first,
                           ctrl.front().second, thickness, img.skeleton);

    // recenter on the bounding box
    int min_y = kDigitSize, max_y = -1, min_x = kDigitSize, max_x = -1;
    for (int y = 0; y < kDigitSize; ++y)
      for (int x = 0; x < kDigitSize; ++x)
        if (img.fg(y, x)) {
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
        }
    int shift_y = (kDigitSize - 1 - max_y - min_y) / 2;
    int shift_x = (kDigitSize - 1 - max_x - min_x) / 2;
    if (min_y + shift_y >= 0 && max_y + shift_y < kDigitSize && min_x + shift_x >= 0 &&
        max_x + shift_x < kDigitSize && (shift_y != 0 || shift_x != 0)) {
      DigitImage moved;
      moved.pixels.assign(img.pixels.size(), 0.0);
      for (int y = min_y; y <= max_y; ++y)
        for (int x = min_x; x <= max_x; ++x)
          if (img.fg(y, x)) moved.set(y + shift_y, x + shift_x, 1.0);
      for (auto& [sy, sx] : img.skeleton) moved.skeleton.emplace_back(sy + shift_y, sx + shift_x);
      img = std::move(moved);
    }

    int fg = img.foreground_count();
    double fraction = static_cast<double>(fg) / (kDigitSize * kDigitSize);
    if (fraction < 0.02 || fraction > 0.25) continue;
    if (count_components(img, 8) != 1) continue;
    return img;
  }
  throw DataError("stroke generation failed to produce a valid digit");
}

/// Applies one perturbation class. Identical (seeded) generators give
/// focal and diffuse the same disk, which makes the thickness ordering
/// healthy <= focal <= diffuse hold pixelwise on a common base image.
inline DigitImage perturb(const DigitImage& img, PerturbClass cls, Rng& rng) {
  if (cls == PerturbClass::healthy) return img;
  if (img.skeleton.empty())
    throw UsageError("perturbation '" + std::string(perturb_name(cls)) +
                     "' needs a skeleton; only procedurally generated images carry one");

  if (cls == PerturbClass::inactive) {
    int len = static_cast<int>(img.skeleton.size());
    for (int attempt = 0; attempt < 10; ++attempt) {
      DigitImage out = img;
      // later attempts favour more cuts; loops and crossings need them
      int min_cuts = attempt < 5 ? 1 : (attempt < 8 ? 2 : 3);
      int cuts = static_cast<int>(rng.uniform_int(min_cuts, 3));
      for (int c = 0; c < cuts; ++c) {
        int gap = static_cast<int>(rng.uniform_int(2, 4));
        int margin = 3;
        if (len <= 2 * margin + gap) break;
        int start = static_cast<int>(rng.uniform_int(margin, len - margin - gap));
        for (int i = start; i < start + gap; ++i) {
          auto [sy, sx] = img.skeleton[static_cast<size_t>(i)];
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int ny = sy + dy, nx = sx + dx;
              if (ny >= 0 && ny < out.height && nx >= 0 && nx < out.width) out.set(ny, nx, 0.0);
            }
        }
      }
      if (out.foreground_count() > 0 && count_components(out, 8) >= 2) return out;
    }
    throw DataError("could not fragment image into two components after 10 attempts");
  }

  // focal and diffuse share the disk draw so seeds line up
  int center_idx = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(img.skeleton.size()) - 1));
  double radius = rng.uniform(4.0, 6.0);
  auto [cy, cx] = img.skeleton[static_cast<size_t>(center_idx)];

  DigitImage out = img;
  if (cls == PerturbClass::diffuse)
    out.pixels = detail::dilate3x3(out.pixels, out.height, out.width);
  detail::dilate_in_disk(out, cy, cx, radius);
  return out;
}

}  // namespace atmil
