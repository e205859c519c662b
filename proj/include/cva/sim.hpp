#pragma once

// Planar vascular phantom with a three-control catheter, a scripted expert and
// a top-view renderer. Everything here is a pure function of its inputs.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cva/image.hpp"
#include "cva/state.hpp"

namespace cva::sim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Target {
    std::string label;  // "P1".."P9"
    int polyline = -1;  // centerline the target sits on
    Vec2 position;
    friend bool operator==(const Target&, const Target&) = default;
};

// Vessel tree. Polyline i starts at the last vertex of polyline parent[i];
// the root polyline (parent == -1) starts at the entry point.
struct VesselMap {
    double world_size = 128.0;
    std::vector<std::vector<Vec2>> centerlines;
    std::vector<double> radii;
    std::vector<int> parent;
    Vec2 entry_point;
    std::vector<Target> targets;

    std::vector<int> children(int polyline) const;
    friend bool operator==(const VesselMap&, const VesselMap&) = default;
};

struct Pose {
    Vec2 position;
    double heading = 0.0;  // radians, image frame (y grows downward)
    friend bool operator==(const Pose&, const Pose&) = default;
};

struct CatheterState {
    double insertion = 0.0;
    double base_angle = 0.0;
    double knob_bend = 0.0;
    Pose tip;
    std::vector<Vec2> body;  // entry .. tip, follow-the-leader trace
    friend bool operator==(const CatheterState&, const CatheterState&) = default;
};

struct SimConfig {
    double v_max = 10.0;          // px/s at translation = 1
    double omega_max = 0.5;       // rad/s at rotation = 1
    double kappa_max = 1.0;       // knob units/s at knob = 1
    double dt = 0.1;              // s
    double goal_tolerance = 5.0;  // px
    int step_cap = 5000;
    double curvature_gain = 0.15;  // tip curvature (rad/px) at knob_bend = 1
    double wall_margin = 0.5;      // px kept between a projected tip and the wall
    int resolution = 224;
};

class ExpertFailure : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

VesselMap build_phantom(std::int64_t seed, int n_targets = 9);

// Empty when all invariants hold, otherwise one message per violation.
std::vector<std::string> check_invariants(const VesselMap& map);

// Distance from p to the closest centerline minus that centerline's radius;
// non-positive means p is in the lumen.
double lumen_clearance(const VesselMap& map, Vec2 p);
bool in_lumen(const VesselMap& map, Vec2 p);

CatheterState initial_state(const VesselMap& map);

CatheterState step(const CatheterState& state, const StateVector& action, const VesselMap& map,
                   const SimConfig& cfg = {});

// Ordered centerline polyline indices from the root to the target's polyline.
std::vector<int> route_to_target(const VesselMap& map, int target_id);

StateVector expert_policy(const CatheterState& state, const VesselMap& map, int target_id,
                          const SimConfig& cfg = {});

// Start/end dots are drawn for target_id when given.
Image render(const VesselMap& map, const CatheterState& state, int resolution = 224,
             std::optional<int> target_id = std::nullopt);

struct SimEpisode {
    int target_id = 0;
    std::int64_t seed = 0;
    double noise_scale = 0.0;
    std::vector<Image> frames;
    std::vector<StateVector> actions;
    std::vector<Pose> tips;  // tip pose shown in each frame
};

// Throws ExpertFailure when the step cap is exhausted before reaching the target.
SimEpisode generate_episode(const VesselMap& map, int target_id, std::int64_t seed,
                            double noise_scale, const SimConfig& cfg = {});

std::string phantom_to_json(const VesselMap& map);
VesselMap phantom_from_json(const std::string& text);

}  // namespace cva::sim
