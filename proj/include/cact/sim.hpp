#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cact/concept_data.hpp"
#include "cact/dataset.hpp"
#include "cact/tensor.hpp"

#include "json.hpp"

namespace cact::sim {

enum class Shape { Cube, Rectangle, Cylinder };
enum class Color { Red, Green, Blue, Yellow };
enum class Area { A, B };
enum class Task { Sorting, Ordering };

const char* to_string(Shape s);
const char* to_string(Color c);
const char* to_string(Area a);
const char* to_string(Task t);
Shape shape_from_string(const std::string& s);
Color color_from_string(const std::string& s);
Task task_from_string(const std::string& s);

struct ObjectSpec {
    Shape shape;
    Color color;
    bool operator==(const ObjectSpec&) const = default;
    auto operator<=>(const ObjectSpec&) const = default;
};

// Shape-specific color constraints: cube in {red, green, yellow},
// rectangle in {red, blue, green, yellow}, cylinder in {red, blue, green}.
bool spec_valid(const ObjectSpec& spec);
std::vector<ObjectSpec> all_valid_specs();

// Collection area for the sorting task. The default rule sends cubes in
// {red, green} and blue cylinders to A, everything else to B. The prose
// variant (A for anything red, or any non-yellow rectangle) is selectable.
Area sorting_target(const ObjectSpec& spec, bool prose_variant = false);

using Ordering = std::array<ObjectSpec, 3>;  // bottom to top

// Semantics left open by the ordering constraint system; the enumerator is
// parameterized so each reading can be tested.
struct OrderingRules {
    // Color rank (red = green = 0, yellow = 1, blue = 2) must not decrease
    // bottom-to-top when true, must not increase when false.
    bool rank_increases_upward = true;
    // Adjacent positions with different colors must differ in rank.
    bool strict_ranks = false;
    // Adjacent positions of equal rank must share a color.
    bool equal_rank_same_color = false;
    // All three (shape, color) pairs must be pairwise distinct.
    bool distinct_objects = false;

    std::string describe() const;
    bool operator==(const OrderingRules&) const = default;
};

// Brute-force filter over all 10^3 shape-color triples applying cardinality,
// positional, color-hierarchy and adjacency constraints. Deterministic order.
std::vector<Ordering> enumerate_valid_orderings(const OrderingRules& rules = {});

struct Scenario {
    Task task = Task::Sorting;
    // (spec, pickup location index in 1..5); sorting has 1 object, ordering 3.
    std::vector<std::pair<ObjectSpec, int>> objects;
    Area target_area = Area::A;   // sorting only
    Ordering target_order{};      // ordering only, bottom to top
    std::string id;

    nlohmann::json to_json() const;
};

struct ScenarioSplit {
    std::vector<Scenario> train;
    std::vector<Scenario> holdout;
};

// Cartesian product of the valid shape-color pairs with the 5 pickup
// locations; the default holdout keeps red cubes and yellow rectangles at
// every location.
std::vector<Scenario> enumerate_sorting_scenarios(bool prose_variant = false);
ScenarioSplit split_sorting_scenarios(bool prose_variant = false);

// One scenario per valid ordering; pickup zones 1..3 are assigned to the
// target's objects through a deterministic permutation so the placement
// order is not readable from the zone index alone.
std::vector<Scenario> enumerate_ordering_scenarios(const OrderingRules& rules = {});
ScenarioSplit split_ordering_scenarios(const OrderingRules& rules = {});

// For each stack position (bottom to top) the 0-based pickup-zone index of
// the object to place there: lowest unused zone with a matching spec.
std::array<int, 3> ordering_assignment(const Scenario& scenario);

// ---- kinematic world -------------------------------------------------------

// 2D top-down workspace [0,1]^2 with a scalar height channel. No dynamics.
struct SimConfig {
    std::size_t image_size = 32;
    std::size_t cameras = 2;
    double step_limit = 0.05;     // max gripper displacement per step
    double grasp_radius = 0.06;   // horizontal attach distance
    double grasp_height = 0.08;   // gripper must be at or below this z to grasp
    double wrist_half = 0.15;     // wrist camera window half-width
    std::size_t episode_budget = 120;
    double expert_jitter = 0.004;
    bool prose_sorting_rule = false;

    std::size_t d_s() const { return 4; }
    std::size_t d_a() const { return 4; }
};

struct Zone {
    double x0, y0, x1, y1;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    double cx() const { return (x0 + x1) / 2; }
    double cy() const { return (y0 + y1) / 2; }
};

Zone area_zone(Area a);
Zone collection_zone();
Zone pickup_zone(int location);  // 1..5

struct WorldObject {
    ObjectSpec spec;
    double x = 0, y = 0;
    bool held = false;
    bool ever_grasped = false;
    // Incremented per placement; defines bottom-to-top stack order inside
    // the collection zone.
    int place_seq = -1;

    bool operator==(const WorldObject&) const = default;
};

struct WorldState {
    double gx = 0.5, gy = 0.5, gz = 0.25;
    bool grip_closed = false;
    int held_index = -1;
    int place_counter = 0;
    std::vector<WorldObject> objects;

    bool operator==(const WorldState&) const = default;
};

WorldState make_world(const Scenario& scenario);

// Moves the gripper toward the commanded pose (x, y, z, grip) clamping the
// displacement, attaches the nearest object in reach on a close transition,
// and releases on open. Throws on non-finite input.
void step(WorldState& world, const float action[4], const SimConfig& cfg);

struct Observation {
    Tensor<float> proprio;                         // 1 x d_s
    std::vector<std::vector<std::uint8_t>> images;  // per camera, H*W*3
};

Observation observe(const WorldState& world, const SimConfig& cfg);

// Deterministic rasterization; camera 0 is the full-workspace scene view,
// camera 1 a window centered on the gripper.
void render(const WorldState& world, const SimConfig& cfg,
            std::vector<std::vector<std::uint8_t>>& frames);

int score_sorting(const WorldState& world, const Scenario& scenario);
int score_ordering(const WorldState& world, const Scenario& scenario);
int score(const WorldState& world, const Scenario& scenario);
int max_score(Task task);

// ---- concept annotation ----------------------------------------------------

enum class SortingSchemaVariant { Location, Target };

ConceptSchema task_schema(Task task, SortingSchemaVariant variant = SortingSchemaVariant::Location);
EpisodeAnnotation annotate(const Scenario& scenario, const ConceptSchema& schema,
                           bool prose_variant = false);

// ---- scripted expert --------------------------------------------------------

// Deterministic waypoint policy with small seeded jitter; resulting episodes
// always achieve the maximum task score (checked, throws on failure).
Episode scripted_expert(const Scenario& scenario, const SimConfig& cfg, const ConceptSchema& schema,
                        std::uint64_t noise_seed);

}  // namespace cact::sim
