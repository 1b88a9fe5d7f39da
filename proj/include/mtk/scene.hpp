#pragma once

#include <filesystem>
#include <vector>

#include "mtk/rng.hpp"
#include "mtk/tensor.hpp"

// Synthetic multi-task scenes: flat-shaded shapes on tilted depth planes.
namespace mtk::scene {

enum class ShapeKind { disc, rect, triangle };

// Geometry in pixel units. Depth over the shape is the plane
// depth0 + slope_x * (x - cx) / W + slope_y * (y - cy) / H.
struct Primitive {
  ShapeKind kind = ShapeKind::disc;
  double cx = 0, cy = 0;
  double size = 0;    // disc radius, rect half-width, triangle circumradius
  double aspect = 1;  // rect half-height / half-width
  double angle = 0;   // triangle rotation, radians
  int label = 1;      // 1..K
  double depth0 = 0.5, slope_x = 0, slope_y = 0;
};

struct Scene {
  std::int64_t H = 0, W = 0;
  Tensor image;                // [H,W,3]
  std::vector<int> semseg;     // [H*W], 0 = background
  Tensor depth;                // [H,W,1] in (0,1], background 1
  Tensor normal;               // [H,W,3] unit vectors
  std::vector<int> boundary;   // [H*W] in {0,1}
};

// Renders the primitives; the nearest (smallest) depth wins each pixel.
// Image noise is drawn from noise_seed.
Scene render(const std::vector<Primitive>& shapes, std::int64_t H, std::int64_t W, int classes,
             std::uint64_t noise_seed);
// 2-5 random primitives, deterministic per seed. H, W >= 32.
Scene generate(std::uint64_t seed, std::int64_t H, std::int64_t W, int classes);

// Pixels with a 4-neighbour of a different label.
std::vector<int> transitions(const std::vector<int>& labels, std::int64_t H, std::int64_t W);
// 3x3 square dilation of a binary map.
std::vector<int> dilate(const std::vector<int>& mask, std::int64_t H, std::int64_t W);

// Batched arrays for a set of scenes, channel-last.
struct Batch {
  Tensor image;               // [B,H,W,3]
  std::vector<int> semseg;    // [B*H*W]
  Tensor depth;               // [B,H,W,1]
  Tensor normal;              // [B,H,W,3]
  std::vector<int> boundary;  // [B*H*W]
  std::int64_t size() const { return image.ndim() ? image.dim(0) : 0; }
};

struct Dataset {
  std::int64_t H = 0, W = 0;
  int classes = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Scene> scenes;

  std::size_t size() const { return scenes.size(); }
  Batch batch(const std::vector<std::size_t>& indices) const;
};

// Scene i uses seed base_seed * 1000003 + i. Generated in parallel.
Dataset make_dataset(std::uint64_t base_seed, int count, std::int64_t H, std::int64_t W,
                     int classes);

// dataset.mtkp (stacked tensors) + index.json in dir.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mtk::scene
