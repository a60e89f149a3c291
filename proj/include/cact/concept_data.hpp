#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cact/tensor.hpp"

#include "json.hpp"

namespace cact {

// A named group of mutually exclusive values, e.g. color in {red, green,
// blue, yellow}. Value order is fixed and determines one-hot layout.
struct ConceptClass {
    std::string name;
    std::vector<std::string> values;

    std::size_t cardinality() const { return values.size(); }
    std::size_t index_of(const std::string& value) const;
};

struct ConceptSchema {
    std::vector<ConceptClass> classes;

    void validate() const;
    std::size_t class_count() const { return classes.size(); }
    const ConceptClass& at(const std::string& name) const;
    bool has(const std::string& name) const;
    // Width of per-class one-hots concatenated in schema order.
    std::size_t total_width() const;

    nlohmann::json to_json() const;
    static ConceptSchema from_json(const nlohmann::json& j);

    bool operator==(const ConceptSchema& o) const;
};

// One one-hot vector per schema class, assigned to an entire episode.
struct EpisodeAnnotation {
    std::map<std::string, std::vector<std::uint8_t>> vectors;

    const std::vector<std::uint8_t>& at(const std::string& cls) const;
    std::size_t hot_index(const std::string& cls) const;
    void validate(const ConceptSchema& schema) const;

    nlohmann::json to_json() const;
    static EpisodeAnnotation from_json(const nlohmann::json& j);

    bool operator==(const EpisodeAnnotation& o) const = default;
};

// Builds one-hot vectors from chosen value names. `chosen` is a list so a
// duplicated class can be detected and rejected.
EpisodeAnnotation encode_annotation(const ConceptSchema& schema,
                                    const std::vector<std::pair<std::string, std::string>>& chosen);

// Projects an episode annotation onto steps: T identical rows, each the
// concatenation of per-class one-hots in schema order.
Tensor<float> broadcast_to_steps(const ConceptSchema& schema, const EpisodeAnnotation& annotation,
                                 std::size_t episode_length);

}  // namespace cact
