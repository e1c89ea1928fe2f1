#pragma once

// Full barrier pipeline: parameters -> periodic field -> site openness ->
// minimal Lipschitz surface -> obstacle selection -> glue -> composite barrier.

#include <cstdint>
#include <memory>
#include <string>

#include "depin/glue.hpp"
#include "depin/mcf.hpp"
#include "depin/obstacle_field.hpp"
#include "depin/percolation.hpp"
#include "depin/qew.hpp"
#include "depin/supersolution.hpp"

namespace depin {

struct ConstructionConfig {
  double r0 = 0.25;
  double r1 = 0.4;
  double smoothness = 0.5;
  double lambda = 1.0;
  std::string distribution = "constant:10";
  std::uint64_t seed = 1;
  int columns = 8;
  int height_cap = 24;
  double headroom = 4.0;  // extra field height above the top slab
  double cell_side = 1.0;
  int threads = 1;
  RecipeOptions recipe;
};

template <int Dim, class Params, class Profile>
struct Construction {
  bool ok = false;
  std::string stage;    // failing stage when !ok
  std::string message;
  Params params;
  BoxGeometry<Dim> geo;
  std::shared_ptr<const ObstacleField<Dim>> field;
  SiteField<Dim> sites;
  LipschitzSurface<Dim> surface;
  Supersolution<Dim, Profile> sup;
};

template <int Dim>
using QewConstruction = Construction<Dim, QewParams, QewProfile>;
template <int Dim>
using McfConstruction = Construction<Dim, McfParams, McfProfile>;

/// Field window of a construction: the torus [0, K P)^n times [r1, cap h + r1 + headroom).
template <int Dim>
Window<Dim> construction_window(const BoxGeometry<Dim>& geo, const ConstructionConfig& cfg) {
  Window<Dim> w;
  for (int i = 0; i < Dim; ++i) {
    w.lo[i] = 0.0;
    w.hi[i] = geo.side();
  }
  w.y_lo = cfg.r1;
  w.y_hi = geo.height_cap * geo.h + cfg.r1 + cfg.headroom;
  return w;
}

namespace detail {

template <int Dim, class Params, class Profile, class Choose, class MakeProfile>
Construction<Dim, Params, Profile> build_construction(const ConstructionConfig& cfg, Choose&& choose,
                                                      MakeProfile&& make_profile) {
  Construction<Dim, Params, Profile> c;
  const ObstacleShape shape(Dim, cfg.r0, cfg.r1, cfg.smoothness);
  const auto dist = StrengthDistribution::parse(cfg.distribution);
  if (!(cfg.lambda > 0.0)) {
    c.stage = "percolation";
    c.message = "empty field (lambda = 0): no open sites";
    return c;
  }
  auto recipe = choose(shape, cfg.lambda, dist, cfg.recipe);
  if (!recipe.ok) {
    c.stage = "parameters";
    c.message = recipe.message;
    return c;
  }
  c.params = recipe.params;
  c.geo.l = c.params.l;
  c.geo.d = c.params.d;
  c.geo.h = c.params.h;
  c.geo.r1 = cfg.r1;
  c.geo.columns = cfg.columns;
  c.geo.height_cap = cfg.height_cap;
  SamplingOptions so;
  so.periodic = true;
  so.cell_side = cfg.cell_side;
  so.threads = cfg.threads;
  c.field = std::make_shared<const ObstacleField<Dim>>(
      sample_field<Dim>(construction_window<Dim>(c.geo, cfg), cfg.lambda, dist, shape, cfg.seed, so));
  c.sites = openness_from_field<Dim>(*c.field, c.geo, c.params.fbar);
  auto surf = minimal_lipschitz_surface<Dim>(c.sites);
  if (!surf.ok) {
    c.stage = "percolation";
    c.message = "no open Lipschitz surface below height cap " + std::to_string(cfg.height_cap) +
                " (column " + std::to_string(surf.failed_column) + " exceeded it)";
    return c;
  }
  c.surface = surf.surface;
  SelectedObstacles<Dim> sel;
  try {
    sel = select_obstacles<Dim>(*c.field, c.sites, c.surface, c.geo, c.params.fbar);
  } catch (const DepinError& e) {
    c.stage = "selection";
    c.message = e.what();
    return c;
  }
  GlueFunction<Dim> glue;
  try {
    glue = build_glue<Dim>(sel, c.geo, cfg.r0);
  } catch (const DepinError& e) {
    c.stage = "glue";
    c.message = e.what();
    return c;
  }
  c.sup = Supersolution<Dim, Profile>(c.field, c.geo, std::move(sel), std::move(glue), make_profile(c.params));
  c.ok = true;
  return c;
}

}  // namespace detail

template <int Dim>
QewConstruction<Dim> build_qew(const ConstructionConfig& cfg) {
  return detail::build_construction<Dim, QewParams, QewProfile>(
      cfg, [](auto&&... a) { return choose_parameters(a...); }, [](const QewParams& p) { return p.profile(); });
}

template <int Dim>
McfConstruction<Dim> build_mcf(const ConstructionConfig& cfg) {
  return detail::build_construction<Dim, McfParams, McfProfile>(
      cfg, [](auto&&... a) { return choose_parameters_mcf(a...); }, [](const McfParams& p) { return p.profile(); });
}

}  // namespace depin
