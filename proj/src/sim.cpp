#include "cact/sim.hpp"

#include <algorithm>
#include <cmath>

#include "cact/common.hpp"

namespace cact::sim {

const char* to_string(Shape s) {
    switch (s) {
        case Shape::Cube: return "cube";
        case Shape::Rectangle: return "rectangle";
        case Shape::Cylinder: return "cylinder";
    }
    return "?";
}

const char* to_string(Color c) {
    switch (c) {
        case Color::Red: return "red";
        case Color::Green: return "green";
        case Color::Blue: return "blue";
        case Color::Yellow: return "yellow";
    }
    return "?";
}

const char* to_string(Area a) { return a == Area::A ? "A" : "B"; }
const char* to_string(Task t) { return t == Task::Sorting ? "sorting" : "ordering"; }

Shape shape_from_string(const std::string& s) {
    if (s == "cube") return Shape::Cube;
    if (s == "rectangle") return Shape::Rectangle;
    if (s == "cylinder") return Shape::Cylinder;
    throw ValidationError("unknown shape: " + s);
}

Color color_from_string(const std::string& s) {
    if (s == "red") return Color::Red;
    if (s == "green") return Color::Green;
    if (s == "blue") return Color::Blue;
    if (s == "yellow") return Color::Yellow;
    throw ValidationError("unknown color: " + s);
}

Task task_from_string(const std::string& s) {
    if (s == "sorting") return Task::Sorting;
    if (s == "ordering") return Task::Ordering;
    throw ValidationError("unknown task: " + s);
}

bool spec_valid(const ObjectSpec& spec) {
    switch (spec.shape) {
        case Shape::Cube:
            return spec.color == Color::Red || spec.color == Color::Green ||
                   spec.color == Color::Yellow;
        case Shape::Rectangle:
            return true;
        case Shape::Cylinder:
            return spec.color == Color::Red || spec.color == Color::Blue ||
                   spec.color == Color::Green;
    }
    return false;
}

std::vector<ObjectSpec> all_valid_specs() {
    std::vector<ObjectSpec> out;
    for (Shape s : {Shape::Cube, Shape::Rectangle, Shape::Cylinder})
        for (Color c : {Color::Red, Color::Green, Color::Blue, Color::Yellow})
            if (spec_valid({s, c})) out.push_back({s, c});
    return out;
}

Area sorting_target(const ObjectSpec& spec, bool prose_variant) {
    if (!spec_valid(spec))
        throw ValidationError(std::string("invalid shape-color pair: ") + to_string(spec.shape) +
                              "-" + to_string(spec.color));
    if (prose_variant) {
        if (spec.color == Color::Red) return Area::A;
        if (spec.shape == Shape::Rectangle && spec.color != Color::Yellow) return Area::A;
        return Area::B;
    }
    if (spec.shape == Shape::Cube && (spec.color == Color::Red || spec.color == Color::Green))
        return Area::A;
    if (spec.shape == Shape::Cylinder && spec.color == Color::Blue) return Area::A;
    return Area::B;
}

// ---- ordering enumeration ---------------------------------------------------

namespace {

int color_rank(Color c) {
    switch (c) {
        case Color::Red:
        case Color::Green: return 0;
        case Color::Yellow: return 1;
        case Color::Blue: return 2;
    }
    return 0;
}

bool ordering_valid(const Ordering& o, const OrderingRules& r) {
    int rects = 0, cubes = 0, cyls = 0;
    for (const ObjectSpec& s : o) {
        if (!spec_valid(s)) return false;
        if (s.shape == Shape::Rectangle) ++rects;
        if (s.shape == Shape::Cube) ++cubes;
        if (s.shape == Shape::Cylinder) ++cyls;
    }
    if (rects < 1 || rects > 2 || cubes > 2 || cyls > 1) return false;
    // cylinder only on top (position 3), rectangles in positions 1-2
    if (o[0].shape == Shape::Cylinder || o[1].shape == Shape::Cylinder) return false;
    if (o[2].shape == Shape::Rectangle) return false;
    auto rank_at = [&](int i) { return color_rank(o[r.rank_increases_upward ? i : 2 - i].color); };
    auto color_at = [&](int i) { return o[r.rank_increases_upward ? i : 2 - i].color; };
    for (int i = 0; i < 2; ++i) {
        if (r.strict_ranks) {
            if (rank_at(i) >= rank_at(i + 1)) return false;
        } else if (rank_at(i) > rank_at(i + 1)) {
            return false;
        }
        if (r.equal_rank_same_color && rank_at(i) == rank_at(i + 1) &&
            color_at(i) != color_at(i + 1))
            return false;
    }
    // identical colors must be vertically adjacent
    if (o[0].color == o[2].color && o[1].color != o[0].color) return false;
    if (r.distinct_objects && (o[0] == o[1] || o[1] == o[2] || o[0] == o[2])) return false;
    return true;
}

}  // namespace

std::string OrderingRules::describe() const {
    std::string s;
    s += rank_increases_upward ? "rank-up" : "rank-down";
    s += strict_ranks ? ",strict" : ",non-strict";
    s += equal_rank_same_color ? ",equal-rank-same-color" : ",equal-rank-free";
    s += distinct_objects ? ",distinct-objects" : ",repeats-allowed";
    return s;
}

std::vector<Ordering> enumerate_valid_orderings(const OrderingRules& rules) {
    const std::vector<ObjectSpec> specs = all_valid_specs();
    std::vector<Ordering> out;
    for (const ObjectSpec& a : specs)
        for (const ObjectSpec& b : specs)
            for (const ObjectSpec& c : specs) {
                const Ordering o{a, b, c};
                if (ordering_valid(o, rules)) out.push_back(o);
            }
    return out;
}

// ---- scenarios --------------------------------------------------------------

namespace {

std::string spec_id(const ObjectSpec& s) {
    return std::string(to_string(s.shape)) + "-" + to_string(s.color);
}

}  // namespace

nlohmann::json Scenario::to_json() const {
    nlohmann::json j;
    j["task"] = to_string(task);
    j["id"] = id;
    j["objects"] = nlohmann::json::array();
    for (const auto& [spec, loc] : objects)
        j["objects"].push_back(
            {{"shape", to_string(spec.shape)}, {"color", to_string(spec.color)}, {"location", loc}});
    if (task == Task::Sorting) {
        j["target_area"] = to_string(target_area);
    } else {
        j["target_order"] = nlohmann::json::array();
        for (const ObjectSpec& s : target_order)
            j["target_order"].push_back({{"shape", to_string(s.shape)}, {"color", to_string(s.color)}});
    }
    return j;
}

std::vector<Scenario> enumerate_sorting_scenarios(bool prose_variant) {
    std::vector<Scenario> out;
    for (const ObjectSpec& spec : all_valid_specs())
        for (int loc = 1; loc <= 5; ++loc) {
            Scenario s;
            s.task = Task::Sorting;
            s.objects = {{spec, loc}};
            s.target_area = sorting_target(spec, prose_variant);
            s.id = "sort-" + spec_id(spec) + "-L" + std::to_string(loc);
            out.push_back(std::move(s));
        }
    return out;
}

ScenarioSplit split_sorting_scenarios(bool prose_variant) {
    ScenarioSplit split;
    for (Scenario& s : enumerate_sorting_scenarios(prose_variant)) {
        const ObjectSpec spec = s.objects[0].first;
        const bool held_out = (spec.shape == Shape::Cube && spec.color == Color::Red) ||
                              (spec.shape == Shape::Rectangle && spec.color == Color::Yellow);
        (held_out ? split.holdout : split.train).push_back(std::move(s));
    }
    return split;
}

std::vector<Scenario> enumerate_ordering_scenarios(const OrderingRules& rules) {
    static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                    {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<Scenario> out;
    const std::vector<Ordering> valid = enumerate_valid_orderings(rules);
    for (std::size_t i = 0; i < valid.size(); ++i) {
        const auto& p = perms[i % 6];
        Scenario s;
        s.task = Task::Ordering;
        s.target_order = valid[i];
        // pickup zone z holds the object placed at stack position p[z]
        s.objects.resize(3);
        for (int z = 0; z < 3; ++z) s.objects[z] = {valid[i][p[z]], z + 1};
        s.id = "ord-" + std::to_string(i) + "-" + spec_id(valid[i][0]) + "_" +
               spec_id(valid[i][1]) + "_" + spec_id(valid[i][2]);
        out.push_back(std::move(s));
    }
    return out;
}

ScenarioSplit split_ordering_scenarios(const OrderingRules& rules) {
    ScenarioSplit split;
    std::vector<Scenario> all = enumerate_ordering_scenarios(rules);
    for (std::size_t i = 0; i < all.size(); ++i)
        ((i % 5 == 2) ? split.holdout : split.train).push_back(std::move(all[i]));
    return split;
}

std::array<int, 3> ordering_assignment(const Scenario& scenario) {
    if (scenario.task != Task::Ordering || scenario.objects.size() != 3)
        throw ValidationError("ordering_assignment: not an ordering scenario");
    std::array<int, 3> assignment{-1, -1, -1};
    std::array<bool, 3> used{false, false, false};
    for (int p = 0; p < 3; ++p) {
        for (int z = 0; z < 3; ++z) {
            if (!used[z] && scenario.objects[z].first == scenario.target_order[p]) {
                assignment[p] = z;
                used[z] = true;
                break;
            }
        }
        if (assignment[p] < 0)
            throw ValidationError("scenario objects do not cover the target ordering");
    }
    return assignment;
}

// ---- world ------------------------------------------------------------------

Zone area_zone(Area a) {
    return a == Area::A ? Zone{0.05, 0.72, 0.35, 0.92} : Zone{0.65, 0.72, 0.95, 0.92};
}

Zone collection_zone() { return {0.40, 0.72, 0.60, 0.92}; }

Zone pickup_zone(int location) {
    if (location < 1 || location > 5) throw ValidationError("pickup location must be in 1..5");
    const double cx = 0.1 + 0.2 * (location - 1);
    return {cx - 0.06, 0.16, cx + 0.06, 0.28};
}

WorldState make_world(const Scenario& scenario) {
    WorldState w;
    for (const auto& [spec, loc] : scenario.objects) {
        const Zone z = pickup_zone(loc);
        WorldObject o;
        o.spec = spec;
        o.x = z.cx();
        o.y = z.cy();
        w.objects.push_back(o);
    }
    return w;
}

void step(WorldState& world, const float action[4], const SimConfig& cfg) {
    for (int i = 0; i < 4; ++i)
        if (!std::isfinite(action[i])) throw NumericError("non-finite action component");
    const double tx = std::clamp<double>(action[0], 0.0, 1.0);
    const double ty = std::clamp<double>(action[1], 0.0, 1.0);
    const double tz = std::clamp<double>(action[2], 0.0, 0.4);
    const bool close = action[3] > 0.5f;

    const double dx = tx - world.gx, dy = ty - world.gy, dz = tz - world.gz;
    const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (dist > cfg.step_limit) {
        const double scale = cfg.step_limit / dist;
        world.gx += dx * scale;
        world.gy += dy * scale;
        world.gz += dz * scale;
    } else {
        world.gx = tx;
        world.gy = ty;
        world.gz = tz;
    }

    if (close && !world.grip_closed) {
        // attach the nearest object within reach
        if (world.gz <= cfg.grasp_height) {
            int best = -1;
            double best_d = cfg.grasp_radius;
            for (std::size_t i = 0; i < world.objects.size(); ++i) {
                if (world.objects[i].held) continue;
                const double ox = world.objects[i].x - world.gx;
                const double oy = world.objects[i].y - world.gy;
                const double d = std::sqrt(ox * ox + oy * oy);
                if (d <= best_d) {
                    best_d = d;
                    best = static_cast<int>(i);
                }
            }
            if (best >= 0) {
                world.held_index = best;
                world.objects[best].held = true;
                world.objects[best].ever_grasped = true;
            }
        }
    } else if (!close && world.grip_closed && world.held_index >= 0) {
        WorldObject& o = world.objects[world.held_index];
        o.held = false;
        o.place_seq = world.place_counter++;
        world.held_index = -1;
    }
    world.grip_closed = close;

    if (world.held_index >= 0) {
        world.objects[world.held_index].x = world.gx;
        world.objects[world.held_index].y = world.gy;
    }
}

// ---- rendering --------------------------------------------------------------

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb color_rgb(Color c) {
    switch (c) {
        case Color::Red: return {230, 60, 60};
        case Color::Green: return {60, 200, 80};
        case Color::Blue: return {70, 90, 230};
        case Color::Yellow: return {235, 220, 80};
    }
    return {0, 0, 0};
}

// Painter's test: does world point (x, y) hit the object silhouette?
bool hits_object(const WorldObject& o, double x, double y) {
    const double dx = x - o.x, dy = y - o.y;
    switch (o.spec.shape) {
        case Shape::Cube: return std::abs(dx) <= 0.05 && std::abs(dy) <= 0.05;
        case Shape::Rectangle: return std::abs(dx) <= 0.08 && std::abs(dy) <= 0.04;
        case Shape::Cylinder: return dx * dx + dy * dy <= 0.055 * 0.055;
    }
    return false;
}

void render_view(const WorldState& world, const SimConfig& cfg, double x0, double y0, double x1,
                 double y1, std::vector<std::uint8_t>& out) {
    const std::size_t n = cfg.image_size;
    out.assign(n * n * 3, 0);
    const Zone areaA = area_zone(Area::A), areaB = area_zone(Area::B), coll = collection_zone();

    // draw order: zones, resting objects by placement order, held object, gripper
    std::vector<const WorldObject*> resting, held;
    for (const WorldObject& o : world.objects) (o.held ? held : resting).push_back(&o);
    std::sort(resting.begin(), resting.end(), [](const WorldObject* a, const WorldObject* b) {
        return a->place_seq < b->place_seq;
    });

    for (std::size_t py = 0; py < n; ++py) {
        for (std::size_t px = 0; px < n; ++px) {
            const double x = x0 + (x1 - x0) * ((px + 0.5) / n);
            // image row 0 is the top of the workspace
            const double y = y1 - (y1 - y0) * ((py + 0.5) / n);
            Rgb c{42, 42, 46};
            if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) {
                c = {12, 12, 12};
            } else {
                if (areaA.contains(x, y)) c = {80, 80, 110};
                if (areaB.contains(x, y)) c = {110, 80, 80};
                if (coll.contains(x, y)) c = {80, 110, 80};
                for (int loc = 1; loc <= 5; ++loc)
                    if (pickup_zone(loc).contains(x, y)) c = {58, 58, 62};
                for (const WorldObject* o : resting)
                    if (hits_object(*o, x, y)) c = color_rgb(o->spec.color);
                for (const WorldObject* o : held)
                    if (hits_object(*o, x, y)) c = color_rgb(o->spec.color);
                const double gdx = std::abs(x - world.gx), gdy = std::abs(y - world.gy);
                const bool on_arm = (gdx <= 0.012 && gdy <= 0.035) || (gdy <= 0.012 && gdx <= 0.035);
                const bool on_tip = gdx <= 0.018 && gdy <= 0.018;
                if (world.grip_closed ? (on_arm || on_tip) : on_arm) {
                    // brightness encodes height
                    const auto v = static_cast<std::uint8_t>(200 - 300 * std::min(world.gz, 0.4));
                    c = {v, v, v};
                }
            }
            const std::size_t base = (py * n + px) * 3;
            out[base] = c.r;
            out[base + 1] = c.g;
            out[base + 2] = c.b;
        }
    }
}

}  // namespace

void render(const WorldState& world, const SimConfig& cfg,
            std::vector<std::vector<std::uint8_t>>& frames) {
    frames.resize(cfg.cameras);
    if (cfg.cameras >= 1) render_view(world, cfg, 0.0, 0.0, 1.0, 1.0, frames[0]);
    if (cfg.cameras >= 2)
        render_view(world, cfg, world.gx - cfg.wrist_half, world.gy - cfg.wrist_half,
                    world.gx + cfg.wrist_half, world.gy + cfg.wrist_half, frames[1]);
    for (std::size_t c = 2; c < cfg.cameras; ++c)
        render_view(world, cfg, 0.0, 0.0, 1.0, 1.0, frames[c]);
}

Observation observe(const WorldState& world, const SimConfig& cfg) {
    Observation obs;
    obs.proprio = Tensor<float>(1, 4);
    obs.proprio[0] = static_cast<float>(world.gx);
    obs.proprio[1] = static_cast<float>(world.gy);
    obs.proprio[2] = static_cast<float>(world.gz);
    obs.proprio[3] = world.grip_closed ? 1.0f : 0.0f;
    render(world, cfg, obs.images);
    return obs;
}

// ---- scoring ---------------------------------------------------------------

int score_sorting(const WorldState& world, const Scenario& scenario) {
    if (scenario.task != Task::Sorting || world.objects.size() != 1)
        throw ValidationError("score_sorting: not a sorting rollout");
    const WorldObject& o = world.objects[0];
    if (!o.ever_grasped) return 0;
    const bool in_a = area_zone(Area::A).contains(o.x, o.y);
    const bool in_b = area_zone(Area::B).contains(o.x, o.y);
    if (o.held || (!in_a && !in_b)) return 1;
    const Area placed = in_a ? Area::A : Area::B;
    return placed == scenario.target_area ? 3 : 2;
}

int score_ordering(const WorldState& world, const Scenario& scenario) {
    if (scenario.task != Task::Ordering || world.objects.size() != 3)
        throw ValidationError("score_ordering: not an ordering rollout");
    const Zone coll = collection_zone();
    // stack order = placement order among objects resting in the zone
    std::vector<const WorldObject*> stack;
    for (const WorldObject& o : world.objects)
        if (!o.held && o.place_seq >= 0 && coll.contains(o.x, o.y)) stack.push_back(&o);
    std::sort(stack.begin(), stack.end(),
              [](const WorldObject* a, const WorldObject* b) { return a->place_seq < b->place_seq; });
    int points = 0;
    for (std::size_t p = 0; p < stack.size() && p < 3; ++p)
        if (stack[p]->spec == scenario.target_order[p]) points += 2;
    // deduct for grasped objects that ended up outside the collection zone
    for (const WorldObject& o : world.objects)
        if (o.ever_grasped && (o.held || !coll.contains(o.x, o.y))) points -= 1;
    return std::max(points, 0);
}

int score(const WorldState& world, const Scenario& scenario) {
    return scenario.task == Task::Sorting ? score_sorting(world, scenario)
                                          : score_ordering(world, scenario);
}

int max_score(Task task) { return task == Task::Sorting ? 3 : 6; }

// ---- concept annotation ------------------------------------------------------

ConceptSchema task_schema(Task task, SortingSchemaVariant variant) {
    ConceptSchema s;
    const std::vector<std::string> shapes{"cube", "rectangle", "cylinder"};
    const std::vector<std::string> colors{"red", "green", "blue", "yellow"};
    if (task == Task::Sorting) {
        s.classes.push_back({"shape", shapes});
        s.classes.push_back({"color", colors});
        if (variant == SortingSchemaVariant::Location)
            s.classes.push_back({"location", {"L1", "L2", "L3", "L4", "L5"}});
        else
            s.classes.push_back({"target", {"A", "B"}});
    } else {
        for (int i = 1; i <= 3; ++i) {
            s.classes.push_back({"object" + std::to_string(i) + "_shape", shapes});
            s.classes.push_back({"object" + std::to_string(i) + "_color", colors});
        }
        s.classes.push_back({"order_first", {"zone1", "zone2", "zone3"}});
    }
    s.validate();
    return s;
}

EpisodeAnnotation annotate(const Scenario& scenario, const ConceptSchema& schema,
                           bool prose_variant) {
    std::vector<std::pair<std::string, std::string>> chosen;
    if (scenario.task == Task::Sorting) {
        const ObjectSpec spec = scenario.objects[0].first;
        chosen.emplace_back("shape", to_string(spec.shape));
        chosen.emplace_back("color", to_string(spec.color));
        if (schema.has("location"))
            chosen.emplace_back("location", "L" + std::to_string(scenario.objects[0].second));
        if (schema.has("target"))
            chosen.emplace_back("target", to_string(sorting_target(spec, prose_variant)));
    } else {
        for (int z = 0; z < 3; ++z) {
            const ObjectSpec spec = scenario.objects[z].first;
            chosen.emplace_back("object" + std::to_string(z + 1) + "_shape", to_string(spec.shape));
            chosen.emplace_back("object" + std::to_string(z + 1) + "_color", to_string(spec.color));
        }
        // which pickup zone's object sits at the bottom of the target stack
        const int first_zone = ordering_assignment(scenario)[0] + 1;
        chosen.emplace_back("order_first", "zone" + std::to_string(first_zone));
    }
    return encode_annotation(schema, chosen);
}

}  // namespace cact::sim
