#pragma once

// Scalp topographic map of a per-electrode scalar as a standalone SVG 1.1
// document. Interpolation is inverse-distance weighting (power 2) over a square
// cell grid clipped to the head disk; colors use a jet ramp normalized to the
// min/max of the supplied values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>

#include "spectral_mind/error.hpp"

namespace smind {

using ElectrodeCoords = std::map<std::string, std::pair<double, double>>;

// Approximate 2-D projections (unit head radius, +x right, +y nose) of the
// 22 EEG channels in the mental-arithmetic recordings. Display metadata only.
inline const ElectrodeCoords& default_electrode_coords() {
  static const ElectrodeCoords coords = [] {
    ElectrodeCoords c;
    const std::pair<const char*, std::pair<double, double>> left[] = {
        {"AFp1", {-0.13, 0.85}}, {"AFF1h", {-0.10, 0.62}}, {"AFF5h", {-0.45, 0.64}}, {"F7", {-0.73, 0.53}},
        {"F3", {-0.35, 0.47}},   {"C3", {-0.45, 0.00}},    {"T7", {-0.90, 0.00}},    {"P7", {-0.73, -0.53}},
        {"P3", {-0.35, -0.47}},  {"POO1", {-0.10, -0.83}},
    };
    const char* right[] = {"AFp2", "AFF2h", "AFF6h", "F8", "F4", "C4", "T8", "P8", "P4", "POO2"};
    for (std::size_t i = 0; i < std::size(left); ++i) {
      c[left[i].first] = left[i].second;
      c[right[i]] = {-left[i].second.first, left[i].second.second};
    }
    c["Cz"] = {0.0, 0.0};
    c["Pz"] = {0.0, -0.45};
    return c;
  }();
  return coords;
}

struct Rgb {
  int r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Jet ramp: t = 0 dark blue, 0.5 green, 1 dark red.
inline Rgb jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto ch = [](double v) { return static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {ch(1.5 - std::abs(4 * t - 3)), ch(1.5 - std::abs(4 * t - 2)), ch(1.5 - std::abs(4 * t - 1))};
}

inline std::string hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

struct TopomapStyle {
  int grid = 40;           // cells per side
  double head_px = 160.0;  // head radius
  std::string title;
};

inline std::string render_topomap(const std::map<std::string, double>& values, const ElectrodeCoords& coords,
                                  const TopomapStyle& style = {}) {
  if (values.empty()) throw DataError("topomap: no channels");
  for (const auto& [name, v] : values) {
    if (!coords.count(name)) throw DataError("topomap: missing coordinate for channel '" + name + "'");
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("topomap: value for channel '" + name + "' is outside [0, 1]");
  }
  if (style.grid < 1) throw UsageError("topomap: grid must be >= 1");

  double lo = 1.0, hi = 0.0;
  for (const auto& [_, v] : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto norm = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 0.5; };
  const auto idw = [&](double x, double y) {
    double num = 0, den = 0;
    for (const auto& [name, v] : values) {
      const auto [ex, ey] = coords.at(name);
      const double d2 = (x - ex) * (x - ex) + (y - ey) * (y - ey);
      if (d2 < 1e-18) return v;
      const double w = 1.0 / d2;
      num += w * v;
      den += w;
    }
    return num / den;
  };

  const double cx = 200, cy = 200, R = style.head_px;
  std::string s;
  char buf[256];
  const auto out = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    s += buf;
  };

  s += "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"480\" height=\"420\" viewBox=\"0 0 480 420\">\n";
  if (!style.title.empty()) s += "<title>" + style.title + "</title>\n";
  out("<defs><clipPath id=\"head\"><circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\"/></clipPath></defs>\n", cx, cy, R);

  // interpolated field
  s += "<g id=\"field\" clip-path=\"url(#head)\" shape-rendering=\"crispEdges\">\n";
  const double cell = 2 * R / style.grid;
  for (int i = 0; i < style.grid; ++i) {
    for (int j = 0; j < style.grid; ++j) {
      const double ux = -1.0 + (j + 0.5) * 2.0 / style.grid;
      const double uy = 1.0 - (i + 0.5) * 2.0 / style.grid;
      const double half = 1.0 / style.grid;
      if (std::hypot(std::max(std::abs(ux) - half, 0.0), std::max(std::abs(uy) - half, 0.0)) > 1.0) continue;
      out("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n", cx - R + j * cell,
          cy - R + i * cell, cell + 0.05, cell + 0.05, hex(jet(norm(idw(ux, uy)))).c_str());
    }
  }
  s += "</g>\n";

  // head, nose, ears
  s += "<g id=\"head-outline\" fill=\"none\" stroke=\"black\" stroke-width=\"2\">\n";
  out("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\"/>\n", cx, cy, R);
  out("<polyline points=\"%.2f,%.2f %.2f,%.2f %.2f,%.2f\"/>\n", cx - 0.1 * R, cy - 0.995 * R, cx, cy - 1.12 * R,
      cx + 0.1 * R, cy - 0.995 * R);
  for (int side : {-1, 1})
    out("<ellipse cx=\"%.2f\" cy=\"%.2f\" rx=\"%.2f\" ry=\"%.2f\"/>\n", cx + side * 1.04 * R, cy, 0.05 * R, 0.16 * R);
  s += "</g>\n";

  // electrodes
  s += "<g id=\"electrodes\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">\n";
  for (const auto& [name, v] : values) {
    const auto [ex, ey] = coords.at(name);
    const double px = cx + ex * R, py = cy - ey * R;
    out("<circle class=\"electrode\" data-channel=\"%s\" data-value=\"%.6f\" cx=\"%.2f\" cy=\"%.2f\" r=\"4\" "
        "fill=\"%s\" stroke=\"black\"/>\n",
        name.c_str(), v, px, py, hex(jet(norm(v))).c_str());
    out("<text x=\"%.2f\" y=\"%.2f\">%s</text>\n", px, py - 7, name.c_str());
  }
  s += "</g>\n";

  // color scale
  s += "<g id=\"colorbar\" font-family=\"sans-serif\" font-size=\"10\">\n";
  const int steps = 32;
  const double bar_top = cy - R, bar_h = 2 * R;
  for (int k = 0; k < steps; ++k) {
    const double t = 1.0 - (k + 0.5) / steps;
    out("<rect x=\"420\" y=\"%.2f\" width=\"16\" height=\"%.2f\" fill=\"%s\"/>\n", bar_top + k * bar_h / steps,
        bar_h / steps + 0.05, hex(jet(t)).c_str());
  }
  out("<rect x=\"420\" y=\"%.2f\" width=\"16\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n", bar_top, bar_h);
  out("<text x=\"440\" y=\"%.2f\">%.1f%%</text>\n", bar_top + 10, 100.0 * hi);
  out("<text x=\"440\" y=\"%.2f\">%.1f%%</text>\n", bar_top + bar_h, 100.0 * lo);
  s += "</g>\n</svg>\n";
  return s;
}

}  // namespace smind
