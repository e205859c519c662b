#include "cva/sim.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

namespace cva::sim {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kPhantomFormatVersion = 1;
constexpr int kMaxTargets = 27;

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

struct SegmentHit {
    Vec2 point;
    double distance = std::numeric_limits<double>::infinity();
    double t = 0.0;  // position along the segment in [0, 1]
};

SegmentHit closest_on_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + ab * t;
    return {q, (p - q).norm(), t};
}

struct CenterlineHit {
    int polyline = -1;
    Vec2 point;
    double clearance = std::numeric_limits<double>::infinity();
};

CenterlineHit nearest_centerline(const VesselMap& map, Vec2 p) {
    CenterlineHit best;
    for (std::size_t i = 0; i < map.centerlines.size(); ++i) {
        const auto& line = map.centerlines[i];
        for (std::size_t k = 0; k + 1 < line.size(); ++k) {
            const SegmentHit hit = closest_on_segment(p, line[k], line[k + 1]);
            const double clearance = hit.distance - map.radii[i];
            if (clearance < best.clearance) best = {static_cast<int>(i), hit.point, clearance};
        }
        if (line.size() == 1) {
            const double clearance = (p - line[0]).norm() - map.radii[i];
            if (clearance < best.clearance) best = {static_cast<int>(i), line[0], clearance};
        }
    }
    return best;
}

// Constant-curvature turn over the first part of the branch, straight afterwards.
std::vector<Vec2> make_branch(Vec2 start, double heading, double turn, double length) {
    constexpr double kSpacing = 1.5;
    constexpr double kTurnFraction = 0.45;
    const int n = std::max(2, static_cast<int>(std::ceil(length / kSpacing)));
    const double ds = length / n;
    const double turn_length = kTurnFraction * length;
    const double curvature = turn / turn_length;
    std::vector<Vec2> pts{start};
    Vec2 p = start;
    double h = heading;
    for (int i = 0; i < n; ++i) {
        const double s0 = i * ds;
        const double s1 = s0 + ds;
        const double turning = std::clamp(std::min(s1, turn_length) - s0, 0.0, ds);
        // midpoint heading keeps the arc length consistent
        const double h_mid = h + 0.5 * curvature * turning;
        p = p + unit(h_mid) * ds;
        h += curvature * turning;
        pts.push_back(p);
    }
    return pts;
}

double end_heading(const std::vector<Vec2>& line) {
    const Vec2 d = line[line.size() - 1] - line[line.size() - 2];
    return std::atan2(d.y, d.x);
}

struct Route {
    std::vector<Vec2> points;
    std::vector<double> arclength;

    double total() const { return arclength.back(); }

    Vec2 at(double s) const {
        if (s <= 0.0) return points.front();
        if (s >= total()) return points.back();
        const auto it = std::upper_bound(arclength.begin(), arclength.end(), s);
        const std::size_t k = static_cast<std::size_t>(it - arclength.begin()) - 1;
        const double seg = arclength[k + 1] - arclength[k];
        const double t = seg > 0.0 ? (s - arclength[k]) / seg : 0.0;
        return points[k] + (points[k + 1] - points[k]) * t;
    }

    double project(Vec2 p) const {
        double best_d = std::numeric_limits<double>::infinity();
        double best_s = 0.0;
        for (std::size_t k = 0; k + 1 < points.size(); ++k) {
            const SegmentHit hit = closest_on_segment(p, points[k], points[k + 1]);
            if (hit.distance < best_d) {
                best_d = hit.distance;
                best_s = arclength[k] + hit.t * (arclength[k + 1] - arclength[k]);
            }
        }
        return best_s;
    }
};

Route build_route(const VesselMap& map, int target_id) {
    const Target& target = map.targets.at(static_cast<std::size_t>(target_id));
    Route route;
    for (int idx : route_to_target(map, target_id)) {
        const auto& line = map.centerlines[static_cast<std::size_t>(idx)];
        std::size_t end = line.size();
        if (idx == target.polyline) {
            // cut at the vertex nearest the target, then finish on the target itself
            std::size_t nearest = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < line.size(); ++k) {
                const double d = (line[k] - target.position).norm();
                if (d < best) {
                    best = d;
                    nearest = k;
                }
            }
            end = nearest + 1;
        }
        for (std::size_t k = 0; k < end; ++k) {
            if (!route.points.empty() && (route.points.back() - line[k]).norm() < 1e-9) continue;
            route.points.push_back(line[k]);
        }
    }
    if (route.points.empty() || (route.points.back() - target.position).norm() > 1e-9) {
        route.points.push_back(target.position);
    }
    if (route.points.size() == 1) route.points.push_back(route.points.front());
    route.arclength.assign(route.points.size(), 0.0);
    for (std::size_t k = 1; k < route.points.size(); ++k) {
        route.arclength[k] = route.arclength[k - 1] + (route.points[k] - route.points[k - 1]).norm();
    }
    return route;
}

std::uint64_t mix_seed(std::int64_t seed) {
    // splitmix64 finalizer, so neighbouring seeds give unrelated streams
    std::uint64_t z = static_cast<std::uint64_t>(seed) + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::vector<int> VesselMap::children(int polyline) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < parent.size(); ++i) {
        if (parent[i] == polyline) out.push_back(static_cast<int>(i));
    }
    return out;
}

VesselMap build_phantom(std::int64_t seed, int n_targets) {
    if (n_targets < 1) throw std::invalid_argument("build_phantom: n_targets must be >= 1");
    if (n_targets > kMaxTargets) throw std::invalid_argument("build_phantom: at most 27 targets supported");

    int depth = 1;
    for (int leaves = 3; leaves < n_targets; leaves *= 3) ++depth;

    // Per-level branch length, lateral spread and radius; deeper trees get shorter branches.
    static const std::array<std::vector<double>, 3> kLengths{
        std::vector<double>{44.0}, std::vector<double>{36.0, 32.0}, std::vector<double>{26.0, 21.0, 17.0}};
    static const std::array<std::vector<double>, 3> kSpread{
        std::vector<double>{0.90}, std::vector<double>{0.96, 0.66}, std::vector<double>{0.95, 0.55, 0.35}};
    const auto& lengths = kLengths[static_cast<std::size_t>(depth - 1)];
    const auto& spread = kSpread[static_cast<std::size_t>(depth - 1)];

    std::mt19937_64 rng(mix_seed(seed));
    auto jitter = [&rng](double half_width) {
        return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
    };

    VesselMap map;
    map.world_size = 128.0;
    map.entry_point = {64.0 + jitter(3.0), 122.0};

    const double trunk_heading = -kPi / 2.0 + jitter(0.06);
    map.centerlines.push_back(make_branch(map.entry_point, trunk_heading, jitter(0.10), 26.0 + jitter(2.0)));
    map.radii.push_back(5.2);
    map.parent.push_back(-1);

    std::vector<int> frontier{0};
    for (int level = 0; level < depth; ++level) {
        std::vector<int> next;
        for (int parent_idx : frontier) {
            const auto& parent_line = map.centerlines[static_cast<std::size_t>(parent_idx)];
            const Vec2 start = parent_line.back();
            const double heading = end_heading(parent_line);
            for (int k = -1; k <= 1; ++k) {
                const double turn = k * spread[static_cast<std::size_t>(level)] + jitter(0.07);
                const double length = lengths[static_cast<std::size_t>(level)] + jitter(2.0);
                map.centerlines.push_back(make_branch(start, heading, turn, length));
                map.radii.push_back(std::max(3.6, map.radii[static_cast<std::size_t>(parent_idx)] * 0.88));
                map.parent.push_back(parent_idx);
                next.push_back(static_cast<int>(map.centerlines.size()) - 1);
            }
        }
        frontier = std::move(next);
    }

    // frontier holds the leaves in left-to-right order
    const int n_leaves = static_cast<int>(frontier.size());
    for (int i = 0; i < n_targets; ++i) {
        const int leaf = frontier[static_cast<std::size_t>(i * n_leaves / n_targets)];
        map.targets.push_back({"P" + std::to_string(i + 1), leaf, map.centerlines[static_cast<std::size_t>(leaf)].back()});
    }
    return map;
}

std::vector<std::string> check_invariants(const VesselMap& map) {
    std::vector<std::string> problems;
    const std::size_t n = map.centerlines.size();
    if (map.radii.size() != n || map.parent.size() != n) {
        problems.emplace_back("centerlines, radii and parent sizes differ");
        return problems;
    }
    int roots = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (map.centerlines[i].empty()) problems.push_back("empty centerline " + std::to_string(i));
        if (!(map.radii[i] > 0.0)) problems.push_back("non-positive radius " + std::to_string(i));
        const int p = map.parent[i];
        if (p == -1) {
            ++roots;
            if (!map.centerlines[i].empty() && (map.centerlines[i].front() - map.entry_point).norm() > 1e-9)
                problems.push_back("root centerline does not start at the entry point");
        } else if (p < 0 || static_cast<std::size_t>(p) >= n) {
            problems.push_back("bad parent index on centerline " + std::to_string(i));
        } else if (!map.centerlines[i].empty() && !map.centerlines[static_cast<std::size_t>(p)].empty() &&
                   (map.centerlines[i].front() - map.centerlines[static_cast<std::size_t>(p)].back()).norm() > 1e-9) {
            problems.push_back("centerline " + std::to_string(i) + " does not start at its parent's end");
        }
    }
    if (roots != 1) problems.push_back("expected exactly one root centerline, found " + std::to_string(roots));
    if (!problems.empty()) return problems;

    // every polyline must reach the root without cycles
    for (std::size_t i = 0; i < n; ++i) {
        std::set<int> seen;
        int cur = static_cast<int>(i);
        while (cur != -1 && seen.insert(cur).second) cur = map.parent[static_cast<std::size_t>(cur)];
        if (cur != -1) problems.push_back("cycle through centerline " + std::to_string(i));
    }
    for (std::size_t t = 0; t < map.targets.size(); ++t) {
        const Target& target = map.targets[t];
        if (target.polyline < 0 || static_cast<std::size_t>(target.polyline) >= n) {
            problems.push_back("target " + target.label + " references no centerline");
            continue;
        }
        if (lumen_clearance(map, target.position) > 1e-9) problems.push_back("target " + target.label + " outside the lumen");
    }
    return problems;
}

double lumen_clearance(const VesselMap& map, Vec2 p) { return nearest_centerline(map, p).clearance; }

bool in_lumen(const VesselMap& map, Vec2 p) { return lumen_clearance(map, p) <= 1e-9; }

CatheterState initial_state(const VesselMap& map) {
    CatheterState s;
    s.tip.position = map.entry_point;
    const auto& root = map.centerlines.at(0);
    const Vec2 d = root.size() > 1 ? root[1] - root[0] : Vec2{0.0, -1.0};
    s.tip.heading = std::atan2(d.y, d.x);
    s.body = {map.entry_point};
    return s;
}

CatheterState step(const CatheterState& state, const StateVector& action, const VesselMap& map,
                   const SimConfig& cfg) {
    if (!action.in_range()) throw std::invalid_argument("step: action components must be finite and in [-1, 1]");
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("step: dt must be positive");

    CatheterState next = state;
    next.insertion = std::max(0.0, state.insertion + cfg.v_max * action.translation * cfg.dt);
    const double twist = cfg.omega_max * action.rotation * cfg.dt;
    next.base_angle = state.base_angle + twist;
    next.knob_bend = std::clamp(state.knob_bend + cfg.kappa_max * action.knob * cfg.dt, -1.0, 1.0);
    next.tip.heading = state.tip.heading + twist;

    const double ds = next.insertion - state.insertion;
    if (ds > 0.0) {
        next.tip.heading += cfg.curvature_gain * next.knob_bend * ds;
        Vec2 candidate = state.tip.position + unit(next.tip.heading) * ds;
        const CenterlineHit hit = nearest_centerline(map, candidate);
        if (hit.clearance > 0.0) {
            // collision: slide back onto the wall of the nearest vessel
            const double radius = map.radii[static_cast<std::size_t>(hit.polyline)];
            const Vec2 offset = candidate - hit.point;
            const double len = offset.norm();
            const double keep = std::max(0.0, radius - cfg.wall_margin);
            candidate = len > 0.0 ? hit.point + offset * (keep / len) : hit.point;
        }
        next.tip.position = candidate;
        next.body.push_back(candidate);
    } else if (ds < 0.0) {
        double remaining = -ds;
        while (remaining > 0.0 && next.body.size() > 1) {
            const Vec2 last = next.body.back();
            const Vec2 prev = next.body[next.body.size() - 2];
            const double seg = (last - prev).norm();
            if (seg <= remaining) {
                next.body.pop_back();
                remaining -= seg;
            } else {
                next.body.back() = last + (prev - last) * (remaining / seg);
                remaining = 0.0;
            }
        }
        next.tip.position = next.body.back();
    }
    next.tip.heading = wrap_angle(next.tip.heading);
    return next;
}

std::vector<int> route_to_target(const VesselMap& map, int target_id) {
    if (target_id < 0 || static_cast<std::size_t>(target_id) >= map.targets.size())
        throw std::out_of_range("target_id does not index the map's targets");
    const int leaf = map.targets[static_cast<std::size_t>(target_id)].polyline;
    std::vector<int> chain;
    std::set<int> seen;
    int cur = leaf;
    while (cur != -1) {
        if (cur < 0 || static_cast<std::size_t>(cur) >= map.centerlines.size() || !seen.insert(cur).second)
            throw ExpertFailure("target " + std::to_string(target_id) + " is not reachable from the entry point");
        chain.push_back(cur);
        cur = map.parent[static_cast<std::size_t>(cur)];
    }
    if ((map.centerlines[static_cast<std::size_t>(chain.back())].front() - map.entry_point).norm() > 1e-9)
        throw ExpertFailure("target " + std::to_string(target_id) + " is not reachable from the entry point");
    std::reverse(chain.begin(), chain.end());
    return chain;
}

StateVector expert_policy(const CatheterState& state, const VesselMap& map, int target_id,
                          const SimConfig& cfg) {
    constexpr double kLookahead = 8.0;
    constexpr double kKnobGain = 4.0;
    constexpr double kRotationGain = 1.5;

    const Route route = build_route(map, target_id);
    const Vec2 goal = route.points.back();
    const double to_goal = (goal - state.tip.position).norm();
    if (to_goal <= cfg.goal_tolerance) return {};

    const double s = route.project(state.tip.position);
    Vec2 aim = route.at(s + kLookahead);
    if ((aim - state.tip.position).norm() < 1.0) aim = goal;
    const Vec2 to_aim = aim - state.tip.position;
    const double err = wrap_angle(std::atan2(to_aim.y, to_aim.x) - state.tip.heading);

    const double curvature = 2.0 * std::sin(err) / std::max(to_aim.norm(), 1.0);
    const double knob_target = std::clamp(curvature / cfg.curvature_gain, -1.0, 1.0);

    StateVector a;
    a.knob = std::clamp(kKnobGain * (knob_target - state.knob_bend), -1.0, 1.0);
    a.rotation = std::clamp(kRotationGain * err, -1.0, 1.0);
    a.translation = std::clamp(1.0 - 1.2 * std::abs(err), 0.15, 1.0);
    a.translation = std::min(a.translation, std::clamp(to_goal / 12.0, 0.25, 1.0));
    return a;
}

Image render(const VesselMap& map, const CatheterState& state, int resolution, std::optional<int> target_id) {
    if (resolution < 32) throw std::invalid_argument("render: resolution must be >= 32");
    constexpr int kShift = 4;
    constexpr double kSub = 1 << kShift;
    const double scale = resolution / map.world_size;
    auto px = [&](Vec2 p) {
        return cv::Point(static_cast<int>(std::lround(p.x * scale * kSub)), static_cast<int>(std::lround(p.y * scale * kSub)));
    };
    auto thickness = [&](double world) { return std::max(1, static_cast<int>(std::lround(world * scale))); };

    // drawn directly in RGB order
    cv::Mat canvas(resolution, resolution, CV_8UC3, cv::Scalar(46, 48, 52));
    auto draw_vessels = [&](double extra, const cv::Scalar& color) {
        for (std::size_t i = 0; i < map.centerlines.size(); ++i) {
            const auto& line = map.centerlines[i];
            const int t = thickness(2.0 * map.radii[i] + extra);
            for (std::size_t k = 0; k + 1 < line.size(); ++k)
                cv::line(canvas, px(line[k]), px(line[k + 1]), color, t, cv::LINE_AA, kShift);
        }
    };
    draw_vessels(2.0, cv::Scalar(150, 112, 104));
    draw_vessels(0.0, cv::Scalar(226, 204, 192));

    if (target_id) {
        const Target& target = map.targets.at(static_cast<std::size_t>(*target_id));
        const int r = static_cast<int>(std::lround(2.5 * scale * kSub));
        cv::circle(canvas, px(map.entry_point), std::max(r, 16), cv::Scalar(214, 28, 28), cv::FILLED, cv::LINE_AA, kShift);
        cv::circle(canvas, px(target.position), std::max(r, 16), cv::Scalar(214, 28, 28), cv::FILLED, cv::LINE_AA, kShift);
    }

    const int body_t = thickness(2.4);
    for (std::size_t k = 0; k + 1 < state.body.size(); ++k)
        cv::line(canvas, px(state.body[k]), px(state.body[k + 1]), cv::Scalar(32, 64, 150), body_t, cv::LINE_AA, kShift);
    cv::circle(canvas, px(state.tip.position), std::max(16, static_cast<int>(std::lround(1.6 * scale * kSub))),
               cv::Scalar(20, 30, 90), cv::FILLED, cv::LINE_AA, kShift);

    Image out(resolution, resolution, 3);
    std::copy(canvas.datastart, canvas.dataend, out.pixels.begin());
    return out;
}

SimEpisode generate_episode(const VesselMap& map, int target_id, std::int64_t seed, double noise_scale,
                            const SimConfig& cfg) {
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("generate_episode: noise_scale must be >= 0");
    (void)route_to_target(map, target_id);

    SimEpisode ep;
    ep.target_id = target_id;
    ep.seed = seed;
    ep.noise_scale = noise_scale;

    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Vec2 goal = map.targets[static_cast<std::size_t>(target_id)].position;

    CatheterState state = initial_state(map);
    for (int k = 0; k < cfg.step_cap; ++k) {
        const StateVector expert = expert_policy(state, map, target_id, cfg);
        ep.frames.push_back(render(map, state, cfg.resolution, target_id));
        ep.tips.push_back(state.tip);
        if ((state.tip.position - goal).norm() <= cfg.goal_tolerance) {
            ep.actions.push_back(expert);
            return ep;
        }
        StateVector applied = expert;
        if (noise_scale > 0.0) {
            for (int i = 0; i < kStateDim; ++i) applied[i] = std::clamp(applied[i] + noise_scale * gauss(rng), -1.0, 1.0);
        }
        // demonstrations only advance
        applied.translation = std::max(0.0, applied.translation);
        ep.actions.push_back(applied);
        state = step(state, applied, map, cfg);
    }
    throw ExpertFailure("target " + map.targets[static_cast<std::size_t>(target_id)].label + " not reached within " +
                        std::to_string(cfg.step_cap) + " steps (seed " + std::to_string(seed) + ")");
}

std::string phantom_to_json(const VesselMap& map) {
    using nlohmann::json;
    json j;
    j["format"] = "cva-phantom";
    j["version"] = kPhantomFormatVersion;
    j["world_size"] = map.world_size;
    j["entry_point"] = {map.entry_point.x, map.entry_point.y};
    j["centerlines"] = json::array();
    for (std::size_t i = 0; i < map.centerlines.size(); ++i) {
        json pts = json::array();
        for (const Vec2& p : map.centerlines[i]) pts.push_back({p.x, p.y});
        j["centerlines"].push_back({{"points", pts}, {"radius", map.radii[i]}, {"parent", map.parent[i]}});
    }
    j["targets"] = json::array();
    for (const Target& t : map.targets) {
        j["targets"].push_back({{"label", t.label}, {"polyline", t.polyline}, {"position", {t.position.x, t.position.y}}});
    }
    return j.dump(2);
}

VesselMap phantom_from_json(const std::string& text) {
    using nlohmann::json;
    const json j = json::parse(text);
    if (j.value("format", "") != "cva-phantom") throw std::runtime_error("not a phantom file");
    if (j.at("version").get<int>() != kPhantomFormatVersion)
        throw std::runtime_error("unsupported phantom version " + j.at("version").dump());
    VesselMap map;
    map.world_size = j.at("world_size").get<double>();
    map.entry_point = {j.at("entry_point")[0].get<double>(), j.at("entry_point")[1].get<double>()};
    for (const auto& c : j.at("centerlines")) {
        std::vector<Vec2> pts;
        for (const auto& p : c.at("points")) pts.push_back({p[0].get<double>(), p[1].get<double>()});
        map.centerlines.push_back(std::move(pts));
        map.radii.push_back(c.at("radius").get<double>());
        map.parent.push_back(c.at("parent").get<int>());
    }
    for (const auto& t : j.at("targets")) {
        map.targets.push_back({t.at("label").get<std::string>(), t.at("polyline").get<int>(),
                               {t.at("position")[0].get<double>(), t.at("position")[1].get<double>()}});
    }
    return map;
}

}  // namespace cva::sim
