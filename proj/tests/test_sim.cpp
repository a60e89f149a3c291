#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "cact/common.hpp"
#include "cact/sim.hpp"

using namespace cact;
using namespace cact::sim;

TEST_CASE("sorting rule: displayed-equation cases") {
    CHECK(sorting_target({Shape::Cube, Color::Red}) == Area::A);
    CHECK(sorting_target({Shape::Cube, Color::Green}) == Area::A);
    CHECK(sorting_target({Shape::Cylinder, Color::Blue}) == Area::A);
    CHECK(sorting_target({Shape::Rectangle, Color::Red}) == Area::B);
    CHECK(sorting_target({Shape::Cube, Color::Yellow}) == Area::B);
    CHECK_THROWS_AS(sorting_target({Shape::Cube, Color::Blue}), ValidationError);
}

TEST_CASE("sorting rule is total on the 10 valid pairs, 3 map to A") {
    const auto specs = all_valid_specs();
    CHECK(specs.size() == 10);
    std::size_t a_count = 0;
    for (const ObjectSpec& s : specs)
        if (sorting_target(s) == Area::A) ++a_count;
    CHECK(a_count == 3);
}

TEST_CASE("prose-variant sorting rule differs as documented") {
    // "red regardless of shape, or rectangle with any non-yellow color"
    CHECK(sorting_target({Shape::Rectangle, Color::Red}, true) == Area::A);
    CHECK(sorting_target({Shape::Cylinder, Color::Red}, true) == Area::A);
    CHECK(sorting_target({Shape::Rectangle, Color::Blue}, true) == Area::A);
    CHECK(sorting_target({Shape::Rectangle, Color::Yellow}, true) == Area::B);
    CHECK(sorting_target({Shape::Cylinder, Color::Blue}, true) == Area::B);
}

TEST_CASE("sorting scenario enumeration: 50 total, 10 held out") {
    const auto all = enumerate_sorting_scenarios();
    CHECK(all.size() == 50);
    std::set<std::string> ids;
    for (const Scenario& s : all) ids.insert(s.id);
    CHECK(ids.size() == 50);  // deterministic and distinct
    const auto split = split_sorting_scenarios();
    CHECK(split.holdout.size() == 10);
    CHECK(split.train.size() == 40);
    for (const Scenario& s : split.holdout) {
        const ObjectSpec spec = s.objects[0].first;
        const bool red_cube = spec.shape == Shape::Cube && spec.color == Color::Red;
        const bool yellow_rect = spec.shape == Shape::Rectangle && spec.color == Color::Yellow;
        CHECK((red_cube || yellow_rect));
    }
}

TEST_CASE("step: zero-displacement command with open grip is a fixed point") {
    SimConfig cfg;
    const Scenario sc = enumerate_sorting_scenarios()[0];
    WorldState w = make_world(sc);
    const WorldState before = w;
    const float action[4] = {static_cast<float>(w.gx), static_cast<float>(w.gy),
                             static_cast<float>(w.gz), 0.0f};
    step(w, action, cfg);
    CHECK(w == before);
}

TEST_CASE("step: closing within grasp radius attaches, far away does not") {
    SimConfig cfg;
    const Scenario sc = enumerate_sorting_scenarios()[0];
    WorldState w = make_world(sc);
    // teleport-by-steps down to the object
    w.gx = w.objects[0].x + 0.02;
    w.gy = w.objects[0].y;
    w.gz = 0.03;
    float close_action[4] = {static_cast<float>(w.gx), static_cast<float>(w.gy), 0.03f, 1.0f};
    step(w, close_action, cfg);
    CHECK(w.held_index == 0);
    CHECK(w.objects[0].ever_grasped);

    WorldState far = make_world(sc);
    far.gx = 0.9;
    far.gy = 0.9;
    far.gz = 0.03;
    float far_action[4] = {0.9f, 0.9f, 0.03f, 1.0f};
    step(far, far_action, cfg);
    CHECK(far.held_index == -1);
}

TEST_CASE("step: held object tracks the gripper and releases in place") {
    SimConfig cfg;
    const Scenario sc = enumerate_sorting_scenarios()[3];
    WorldState w = make_world(sc);
    w.gx = w.objects[0].x;
    w.gy = w.objects[0].y;
    w.gz = 0.03;
    float grab[4] = {static_cast<float>(w.gx), static_cast<float>(w.gy), 0.03f, 1.0f};
    step(w, grab, cfg);
    REQUIRE(w.held_index == 0);
    float move[4] = {static_cast<float>(w.gx + 0.04), static_cast<float>(w.gy), 0.03f, 1.0f};
    step(w, move, cfg);
    CHECK(w.objects[0].x == doctest::Approx(w.gx));
    float release[4] = {static_cast<float>(w.gx), static_cast<float>(w.gy), 0.03f, 0.0f};
    step(w, release, cfg);
    CHECK(w.held_index == -1);
    CHECK_FALSE(w.objects[0].held);
}

TEST_CASE("step rejects non-finite actions") {
    SimConfig cfg;
    WorldState w = make_world(enumerate_sorting_scenarios()[0]);
    float bad[4] = {0.5f, 0.5f, std::numeric_limits<float>::quiet_NaN(), 0.0f};
    CHECK_THROWS_AS(step(w, bad, cfg), NumericError);
}

TEST_CASE("render: determinism and empty-world background") {
    SimConfig cfg;
    WorldState w = make_world(enumerate_sorting_scenarios()[7]);
    std::vector<std::vector<std::uint8_t>> f1, f2;
    render(w, cfg, f1);
    render(w, cfg, f2);
    CHECK(f1 == f2);
    CHECK(f1.size() == 2);
    CHECK(f1[0].size() == cfg.image_size * cfg.image_size * 3);

    WorldState empty;
    std::vector<std::vector<std::uint8_t>> fe;
    render(empty, cfg, fe);
    // no objects: every pixel is background, zone tint, or gripper marker
    std::set<std::array<std::uint8_t, 3>> palette;
    for (std::size_t i = 0; i < fe[0].size(); i += 3)
        palette.insert({fe[0][i], fe[0][i + 1], fe[0][i + 2]});
    CHECK(palette.size() <= 8);
}

TEST_CASE("render: a red cube shows red pixels only inside its cell region") {
    SimConfig cfg;
    Scenario sc;
    sc.task = Task::Sorting;
    sc.objects = {{{Shape::Cube, Color::Red}, 3}};
    sc.target_area = Area::A;
    sc.id = "probe";
    WorldState w = make_world(sc);
    std::vector<std::vector<std::uint8_t>> frames;
    render(w, cfg, frames);
    const std::size_t n = cfg.image_size;
    const double ox = w.objects[0].x, oy = w.objects[0].y;
    for (std::size_t py = 0; py < n; ++py)
        for (std::size_t px = 0; px < n; ++px) {
            const std::size_t base = (py * n + px) * 3;
            const bool is_red = frames[0][base] == 230 && frames[0][base + 1] == 60;
            const double x = (px + 0.5) / n;
            const double y = 1.0 - (py + 0.5) / n;
            const bool inside = std::abs(x - ox) <= 0.05 + 1.0 / n && std::abs(y - oy) <= 0.05 + 1.0 / n;
            if (is_red) CHECK(inside);
        }
}

TEST_CASE("scoring: sorting hierarchy") {
    Scenario sc;
    sc.task = Task::Sorting;
    sc.objects = {{{Shape::Cube, Color::Red}, 1}};
    sc.target_area = Area::A;  // sorting_target(red cube) = A
    sc.id = "score-probe";
    WorldState w = make_world(sc);
    CHECK(score_sorting(w, sc) == 0);  // never grasped
    w.objects[0].ever_grasped = true;
    w.objects[0].x = 0.5;  // outside both areas
    w.objects[0].y = 0.5;
    CHECK(score_sorting(w, sc) == 1);
    const Zone b = area_zone(Area::B);
    w.objects[0].x = b.cx();
    w.objects[0].y = b.cy();
    CHECK(score_sorting(w, sc) == 2);  // wrong area
    const Zone a = area_zone(Area::A);
    w.objects[0].x = a.cx();
    w.objects[0].y = a.cy();
    CHECK(score_sorting(w, sc) == 3);
    w.objects[0].held = true;
    CHECK(score_sorting(w, sc) == 1);  // still held at the end
}

TEST_CASE("scoring: ordering points and deductions") {
    const auto scenarios = enumerate_ordering_scenarios();
    REQUIRE(!scenarios.empty());
    const Scenario& sc = scenarios[0];
    WorldState w = make_world(sc);
    CHECK(score_ordering(w, sc) == 0);  // nothing placed

    // place all three in target order at the collection zone
    const Zone coll = collection_zone();
    const auto assign = ordering_assignment(sc);
    for (int p = 0; p < 3; ++p) {
        WorldObject& o = w.objects[assign[p]];
        o.ever_grasped = true;
        o.x = coll.cx();
        o.y = coll.cy();
        o.place_seq = p;
    }
    CHECK(score_ordering(w, sc) == 6);

    // exactly one object at its correct position, others untouched
    WorldState one = make_world(sc);
    WorldObject& o = one.objects[assign[0]];
    o.ever_grasped = true;
    o.x = coll.cx();
    o.y = coll.cy();
    o.place_seq = 0;
    CHECK(score_ordering(one, sc) == 2);

    // a grasped object dropped outside the zone costs a point
    WorldState drop = one;
    WorldObject& bad = drop.objects[assign[1]];
    bad.ever_grasped = true;
    bad.x = 0.1;
    bad.y = 0.5;
    bad.place_seq = 1;
    CHECK(score_ordering(drop, sc) == 1);
}

TEST_CASE("expert demonstrations: max score, determinism, annotation match") {
    SimConfig cfg;
    const ConceptSchema schema = task_schema(Task::Sorting);
    const auto scenarios = enumerate_sorting_scenarios();
    // every enumerated scenario reaches 3/3 (throws otherwise)
    for (const Scenario& sc : scenarios) {
        const Episode e = sim::scripted_expert(sc, cfg, schema, 42);
        CHECK(e.length() >= 1);
        CHECK(e.length() <= cfg.episode_budget);
        // auto-annotation matches scenario attributes
        CHECK(e.annotation.hot_index("shape") == static_cast<std::size_t>(sc.objects[0].first.shape));
        CHECK(e.annotation.hot_index("color") == static_cast<std::size_t>(sc.objects[0].first.color));
        CHECK(e.annotation.hot_index("location") == static_cast<std::size_t>(sc.objects[0].second - 1));
    }
    const Episode a = sim::scripted_expert(scenarios[11], cfg, schema, 9);
    const Episode b = sim::scripted_expert(scenarios[11], cfg, schema, 9);
    CHECK(a.proprio.size() == b.proprio.size());
    CHECK(std::memcmp(a.proprio.data(), b.proprio.data(), a.proprio.size() * 4) == 0);
    CHECK(std::memcmp(a.actions.data(), b.actions.data(), a.actions.size() * 4) == 0);
    CHECK(a.images == b.images);
    const Episode c = sim::scripted_expert(scenarios[11], cfg, schema, 10);
    CHECK(std::memcmp(a.actions.data(), c.actions.data(), a.actions.size() * 4) != 0);
}

TEST_CASE("expert handles every valid ordering scenario at 6/6") {
    SimConfig cfg;
    const ConceptSchema schema = task_schema(Task::Ordering);
    for (const Scenario& sc : enumerate_ordering_scenarios()) {
        const Episode e = sim::scripted_expert(sc, cfg, schema, 7);
        CHECK(e.length() <= cfg.episode_budget);
    }
}
