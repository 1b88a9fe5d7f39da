#pragma once

#include <array>
#include <vector>

#include "mtk/ssm.hpp"

// Four-direction 2D selective scan over [B,H,W,C] maps.
namespace mtk::scan2d {

// D1 row-major (k = r*W + c), D2 column-major (k = c*H + r), D3 and D4 the
// reverses of D1 and D2.
enum class Direction { D1 = 0, D2 = 1, D3 = 2, D4 = 3 };
inline constexpr std::array<Direction, 4> kAllDirections{Direction::D1, Direction::D2,
                                                         Direction::D3, Direction::D4};
const char* name(Direction d);

// order[k] = row-major position visited at sequence index k.
std::vector<std::int64_t> permutation(std::int64_t H, std::int64_t W, Direction d);
std::vector<std::int64_t> inverse_permutation(std::int64_t H, std::int64_t W, Direction d);

// [B,H,W,C] <-> [B,H*W,C]
Var unfold(Var x, Direction d);
Var fold(Var seq, std::int64_t H, std::int64_t W, Direction d);
Tensor unfold(const Tensor& x, Direction d);
Tensor fold(const Tensor& seq, std::int64_t H, std::int64_t W, Direction d);

struct Ss2dParams {
  std::array<ssm::SsmParams, 4> dir;
  static Ss2dParams init(std::int64_t channels, std::int64_t state, Rng& rng);
  // All four directions share one parameter set.
  static Ss2dParams tied(const ssm::SsmParams& p) { return {{p, p, p, p}}; }
};

using DirectionVars = std::array<ssm::SsmVars, 4>;

// Sum over active directions (in D1..D4 order) of fold(scan(unfold(query),
// params from unfold(shared))). shared == query is SS2D; otherwise CSS2D.
Var cross_forward(const DirectionVars& p, Var query, Var shared,
                  const std::vector<Direction>& active = {kAllDirections.begin(),
                                                          kAllDirections.end()});

Tensor ss2d(const Ss2dParams& p, const Tensor& x,
            const std::vector<Direction>& active = {kAllDirections.begin(), kAllDirections.end()});
Tensor css2d(const Ss2dParams& p, const Tensor& query, const Tensor& shared,
             const std::vector<Direction>& active = {kAllDirections.begin(),
                                                     kAllDirections.end()});

}  // namespace mtk::scan2d
