#include "mtk/scene.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <json.hpp>

#include "mtk/checkpoint.hpp"
#include "mtk/error.hpp"

namespace mtk::scene {

namespace {

bool inside(const Primitive& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy;
  switch (p.kind) {
    case ShapeKind::disc: return dx * dx + dy * dy <= p.size * p.size;
    case ShapeKind::rect: return std::abs(dx) <= p.size && std::abs(dy) <= p.size * p.aspect;
    case ShapeKind::triangle: {
      double vx[3], vy[3];
      for (int k = 0; k < 3; ++k) {
        const double a = p.angle + 2.0 * std::numbers::pi * k / 3.0;
        vx[k] = p.size * std::cos(a);
        vy[k] = p.size * std::sin(a);
      }
      // Same-side test against each edge (vertices are counter-clockwise).
      for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        const double cross = (vx[j] - vx[k]) * (dy - vy[k]) - (vy[j] - vy[k]) * (dx - vx[k]);
        if (cross < 0) return false;
      }
      return true;
    }
  }
  return false;
}

// RGB per class; index 0 is the background.
constexpr double kPalette[][3] = {{0.45, 0.45, 0.45}, {0.9, 0.2, 0.2}, {0.2, 0.8, 0.2},
                                  {0.2, 0.3, 0.9},    {0.9, 0.8, 0.1}, {0.8, 0.2, 0.8},
                                  {0.1, 0.8, 0.8},    {0.95, 0.55, 0.1}, {0.5, 0.3, 0.1}};
constexpr int kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

}  // namespace

std::vector<int> transitions(const std::vector<int>& labels, std::int64_t H, std::int64_t W) {
  std::vector<int> out(labels.size(), 0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const int l = labels[y * W + x];
      const bool edge = (x > 0 && labels[y * W + x - 1] != l) ||
                        (x + 1 < W && labels[y * W + x + 1] != l) ||
                        (y > 0 && labels[(y - 1) * W + x] != l) ||
                        (y + 1 < H && labels[(y + 1) * W + x] != l);
      out[y * W + x] = edge ? 1 : 0;
    }
  return out;
}

std::vector<int> dilate(const std::vector<int>& mask, std::int64_t H, std::int64_t W) {
  std::vector<int> out(mask.size(), 0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      int v = 0;
      for (std::int64_t dy = -1; dy <= 1 && !v; ++dy)
        for (std::int64_t dx = -1; dx <= 1 && !v; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W && mask[yy * W + xx]) v = 1;
        }
      out[y * W + x] = v;
    }
  return out;
}

Scene render(const std::vector<Primitive>& shapes, std::int64_t H, std::int64_t W, int classes,
             std::uint64_t noise_seed) {
  Scene s;
  s.H = H;
  s.W = W;
  s.image = Tensor({H, W, 3});
  s.depth = Tensor({H, W, 1}, 1.0);
  s.normal = Tensor({H, W, 3});
  s.semseg.assign(static_cast<std::size_t>(H * W), 0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const auto& p : shapes) {
        if (!inside(p, px, py)) continue;
        double d = p.depth0 + p.slope_x * (px - p.cx) / static_cast<double>(W) +
                   p.slope_y * (py - p.cy) / static_cast<double>(H);
        d = std::clamp(d, 0.02, 0.98);
        if (d < s.depth[y * W + x]) {
          s.depth[y * W + x] = d;
          s.semseg[y * W + x] = p.label;
        }
      }
    }

  // Normals from central differences in normalised image coordinates.
  auto depth_at = [&](std::int64_t y, std::int64_t x) {
    y = std::clamp<std::int64_t>(y, 0, H - 1);
    x = std::clamp<std::int64_t>(x, 0, W - 1);
    return s.depth[y * W + x];
  };
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double hx = static_cast<double>(std::min(x + 1, W - 1) - std::max<std::int64_t>(x - 1, 0)) /
                        static_cast<double>(W);
      const double hy = static_cast<double>(std::min(y + 1, H - 1) - std::max<std::int64_t>(y - 1, 0)) /
                        static_cast<double>(H);
      const double gx = hx > 0 ? (depth_at(y, x + 1) - depth_at(y, x - 1)) / hx : 0.0;
      const double gy = hy > 0 ? (depth_at(y + 1, x) - depth_at(y - 1, x)) / hy : 0.0;
      const double n0 = -gx, n1 = -gy, n2 = 1.0;
      const double inv = 1.0 / std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
      double* n = s.normal.data() + (y * W + x) * 3;
      n[0] = n0 * inv;
      n[1] = n1 * inv;
      n[2] = n2 * inv;
    }

  Rng noise(noise_seed);
  for (std::int64_t i = 0; i < H * W; ++i) {
    const int label = s.semseg[i];
    const double* rgb = kPalette[label % kPaletteSize];
    const double shade = 1.2 - 0.5 * s.depth[i];
    for (int c = 0; c < 3; ++c) s.image[i * 3 + c] = rgb[c] * shade + 0.05 * noise.normal();
  }
  (void)classes;

  s.boundary = dilate(transitions(s.semseg, H, W), H, W);
  return s;
}

Scene generate(std::uint64_t seed, std::int64_t H, std::int64_t W, int classes) {
  if (H < 32 || W < 32) throw DomainError("scenes need H, W >= 32");
  if (classes < 1) throw DomainError("scenes need at least one class");
  Rng rng(seed);
  const int count = 2 + static_cast<int>(rng.below(4));
  const double scale = static_cast<double>(std::min(H, W));
  std::vector<Primitive> shapes;
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = static_cast<ShapeKind>(rng.below(3));
    p.cx = rng.uniform(0.15, 0.85) * static_cast<double>(W);
    p.cy = rng.uniform(0.15, 0.85) * static_cast<double>(H);
    p.size = rng.uniform(0.1, 0.25) * scale;
    p.aspect = rng.uniform(0.5, 1.5);
    p.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.label = 1 + static_cast<int>(rng.below(classes));
    p.depth0 = rng.uniform(0.2, 0.85);
    p.slope_x = rng.uniform(-0.3, 0.3);
    p.slope_y = rng.uniform(-0.3, 0.3);
    shapes.push_back(p);
  }
  return render(shapes, H, W, classes, rng.next());
}

Batch Dataset::batch(const std::vector<std::size_t>& indices) const {
  const auto B = static_cast<std::int64_t>(indices.size());
  Batch b;
  b.image = Tensor({B, H, W, 3});
  b.depth = Tensor({B, H, W, 1});
  b.normal = Tensor({B, H, W, 3});
  const std::int64_t P = H * W;
  for (std::int64_t i = 0; i < B; ++i) {
    const Scene& s = scenes.at(indices[i]);
    std::copy(s.image.data(), s.image.data() + P * 3, b.image.data() + i * P * 3);
    std::copy(s.depth.data(), s.depth.data() + P, b.depth.data() + i * P);
    std::copy(s.normal.data(), s.normal.data() + P * 3, b.normal.data() + i * P * 3);
    b.semseg.insert(b.semseg.end(), s.semseg.begin(), s.semseg.end());
    b.boundary.insert(b.boundary.end(), s.boundary.begin(), s.boundary.end());
  }
  return b;
}

Dataset make_dataset(std::uint64_t base_seed, int count, std::int64_t H, std::int64_t W,
                     int classes) {
  Dataset d;
  d.H = H;
  d.W = W;
  d.classes = classes;
  d.scenes.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) d.seeds.push_back(base_seed * 1000003ULL + static_cast<std::uint64_t>(i));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) d.scenes[i] = generate(d.seeds[i], H, W, classes);
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch b = data.batch(all);
  auto ints = [&](const std::vector<int>& v) {
    Tensor t({b.size(), data.H, data.W});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = v[i];
    return t;
  };
  checkpoint::save(dir / "dataset.mtkp", {{"image", b.image},
                                          {"semseg", ints(b.semseg)},
                                          {"depth", b.depth},
                                          {"normal", b.normal},
                                          {"boundary", ints(b.boundary)}});
  nlohmann::json index = {{"samples", data.size()},
                          {"H", data.H},
                          {"W", data.W},
                          {"classes", data.classes},
                          {"seeds", data.seeds},
                          {"tensors", "dataset.mtkp"}};
  std::ofstream(dir / "index.json") << index.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error("io", "missing " + (dir / "index.json").string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const std::exception& e) {
    throw SchemaError(std::string("dataset index: ") + e.what());
  }
  Dataset d;
  try {
    d.H = index.at("H").get<std::int64_t>();
    d.W = index.at("W").get<std::int64_t>();
    d.classes = index.at("classes").get<int>();
    d.seeds = index.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("dataset index: ") + e.what());
  }
  std::map<std::string, Tensor> t;
  for (auto& [name, value] : checkpoint::load(dir / "dataset.mtkp")) t[name] = std::move(value);
  for (const char* key : {"image", "semseg", "depth", "normal", "boundary"})
    if (!t.count(key)) throw SchemaError(std::string("dataset tensor missing: ") + key);
  const std::int64_t S = t["image"].dim(0), P = d.H * d.W;
  if (S != static_cast<std::int64_t>(d.seeds.size())) throw SchemaError("dataset sample count mismatch");
  for (std::int64_t i = 0; i < S; ++i) {
    Scene s;
    s.H = d.H;
    s.W = d.W;
    s.image = Tensor({d.H, d.W, 3}, std::vector<double>(t["image"].data() + i * P * 3,
                                                       t["image"].data() + (i + 1) * P * 3));
    s.depth = Tensor({d.H, d.W, 1}, std::vector<double>(t["depth"].data() + i * P,
                                                       t["depth"].data() + (i + 1) * P));
    s.normal = Tensor({d.H, d.W, 3}, std::vector<double>(t["normal"].data() + i * P * 3,
                                                        t["normal"].data() + (i + 1) * P * 3));
    for (std::int64_t p = 0; p < P; ++p) {
      s.semseg.push_back(static_cast<int>(t["semseg"][i * P + p]));
      s.boundary.push_back(static_cast<int>(t["boundary"][i * P + p]));
    }
    d.scenes.push_back(std::move(s));
  }
  return d;
}

}  // namespace mtk::scene
