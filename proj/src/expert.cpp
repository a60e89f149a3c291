#include <cmath>
#include <vector>

#include "cact/common.hpp"
#include "cact/sim.hpp"

namespace cact::sim {

namespace {

struct Waypoint {
    double x, y, z;
    bool close;
    bool exact;  // suppress jitter on approach so grasp/release geometry holds
};

constexpr double kHoverZ = 0.12;
constexpr double kGraspZ = 0.03;

void object_waypoints(std::vector<Waypoint>& wps, double ox, double oy, double dx, double dy) {
    wps.push_back({ox, oy, kHoverZ, false, false});  // approach above object
    wps.push_back({ox, oy, kGraspZ, false, true});   // descend
    wps.push_back({ox, oy, kGraspZ, true, true});    // grasp
    wps.push_back({ox, oy, kHoverZ, true, false});   // lift
    wps.push_back({dx, dy, kHoverZ, true, false});   // transport
    wps.push_back({dx, dy, kGraspZ, true, true});    // descend
    wps.push_back({dx, dy, kGraspZ, false, true});   // release
    wps.push_back({dx, dy, kHoverZ, false, false});  // retreat
}

}  // namespace

Episode scripted_expert(const Scenario& scenario, const SimConfig& cfg, const ConceptSchema& schema,
                        std::uint64_t noise_seed) {
    WorldState world = make_world(scenario);
    Rng rng(mix_seed(noise_seed, "expert/" + scenario.id));

    std::vector<Waypoint> wps;
    if (scenario.task == Task::Sorting) {
        const Zone target = area_zone(scenario.target_area);
        object_waypoints(wps, world.objects[0].x, world.objects[0].y, target.cx(), target.cy());
    } else {
        const Zone coll = collection_zone();
        for (int zone : ordering_assignment(scenario))
            object_waypoints(wps, world.objects[zone].x, world.objects[zone].y, coll.cx(),
                             coll.cy());
    }

    Episode e;
    e.scenario_id = scenario.id;
    e.annotation = annotate(scenario, schema, cfg.prose_sorting_rule);
    e.images.resize(cfg.cameras);

    std::vector<float> proprio_rows, action_rows;
    const double advance = cfg.step_limit * 0.98;

    for (const Waypoint& wp : wps) {
        for (std::size_t guard = 0;; ++guard) {
            if (guard > cfg.episode_budget)
                throw ValidationError("scripted_expert: waypoint unreachable in " + scenario.id);
            const double dx = wp.x - world.gx, dy = wp.y - world.gy, dz = wp.z - world.gz;
            const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
            float action[4];
            if (dist <= advance) {
                action[0] = static_cast<float>(wp.x);
                action[1] = static_cast<float>(wp.y);
                action[2] = static_cast<float>(wp.z);
            } else {
                const double s = advance / dist;
                double jx = 0.0, jy = 0.0;
                if (!wp.exact && cfg.expert_jitter > 0.0) {
                    jx = rng.uniform(-cfg.expert_jitter, cfg.expert_jitter);
                    jy = rng.uniform(-cfg.expert_jitter, cfg.expert_jitter);
                }
                action[0] = static_cast<float>(world.gx + dx * s + jx);
                action[1] = static_cast<float>(world.gy + dy * s + jy);
                action[2] = static_cast<float>(world.gz + dz * s);
            }
            action[3] = wp.close ? 1.0f : 0.0f;

            Observation obs = observe(world, cfg);
            for (std::size_t i = 0; i < 4; ++i) proprio_rows.push_back(obs.proprio[i]);
            for (std::size_t i = 0; i < 4; ++i) action_rows.push_back(action[i]);
            for (std::size_t c = 0; c < cfg.cameras; ++c)
                e.images[c].insert(e.images[c].end(), obs.images[c].begin(), obs.images[c].end());

            step(world, action, cfg);
            if (proprio_rows.size() / 4 > cfg.episode_budget)
                throw ValidationError("scripted_expert: episode budget exceeded in " + scenario.id);

            // actions are float32, so the settled pose carries float rounding
            const bool grip_settled = world.grip_closed == wp.close;
            const double rx = wp.x - world.gx, ry = wp.y - world.gy, rz = wp.z - world.gz;
            if (grip_settled && std::sqrt(rx * rx + ry * ry + rz * rz) < 1e-6) break;
        }
    }

    const std::size_t T = proprio_rows.size() / 4;
    e.proprio = Tensor<float>(T, 4);
    e.actions = Tensor<float>(T, 4);
    std::copy(proprio_rows.begin(), proprio_rows.end(), e.proprio.data());
    std::copy(action_rows.begin(), action_rows.end(), e.actions.data());

    const int achieved = score(world, scenario);
    if (achieved != max_score(scenario.task))
        throw ValidationError("scripted_expert: demonstration scored " + std::to_string(achieved) +
                              "/" + std::to_string(max_score(scenario.task)) + " in " + scenario.id);
    return e;
}

}  // namespace cact::sim
