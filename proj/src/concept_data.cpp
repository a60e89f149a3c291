#include "cact/concept_data.hpp"

#include <set>

#include "cact/common.hpp"

namespace cact {

std::size_t ConceptClass::index_of(const std::string& value) const {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] == value) return i;
    throw ValidationError("unknown value '" + value + "' in concept class '" + name + "'");
}

void ConceptSchema::validate() const {
    if (classes.empty()) throw ValidationError("schema must contain at least one concept class");
    std::set<std::string> names;
    for (const ConceptClass& c : classes) {
        if (!names.insert(c.name).second)
            throw ValidationError("duplicate concept class name: " + c.name);
        if (c.values.size() < 2)
            throw ValidationError("concept class '" + c.name + "' needs at least two values");
        std::set<std::string> vals(c.values.begin(), c.values.end());
        if (vals.size() != c.values.size())
            throw ValidationError("duplicate value name in concept class '" + c.name + "'");
    }
}

const ConceptClass& ConceptSchema::at(const std::string& name) const {
    for (const ConceptClass& c : classes)
        if (c.name == name) return c;
    throw ValidationError("unknown concept class: " + name);
}

bool ConceptSchema::has(const std::string& name) const {
    for (const ConceptClass& c : classes)
        if (c.name == name) return true;
    return false;
}

std::size_t ConceptSchema::total_width() const {
    std::size_t w = 0;
    for (const ConceptClass& c : classes) w += c.cardinality();
    return w;
}

nlohmann::json ConceptSchema::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const ConceptClass& c : classes) j.push_back({{"name", c.name}, {"values", c.values}});
    return j;
}

ConceptSchema ConceptSchema::from_json(const nlohmann::json& j) {
    ConceptSchema s;
    for (const auto& e : j)
        s.classes.push_back({e.at("name").get<std::string>(),
                             e.at("values").get<std::vector<std::string>>()});
    s.validate();
    return s;
}

bool ConceptSchema::operator==(const ConceptSchema& o) const {
    if (classes.size() != o.classes.size()) return false;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].name != o.classes[i].name || classes[i].values != o.classes[i].values)
            return false;
    return true;
}

const std::vector<std::uint8_t>& EpisodeAnnotation::at(const std::string& cls) const {
    auto it = vectors.find(cls);
    if (it == vectors.end()) throw ValidationError("annotation missing concept class: " + cls);
    return it->second;
}

std::size_t EpisodeAnnotation::hot_index(const std::string& cls) const {
    const auto& v = at(cls);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i]) return i;
    throw ValidationError("annotation vector for '" + cls + "' has no hot entry");
}

void EpisodeAnnotation::validate(const ConceptSchema& schema) const {
    if (vectors.size() != schema.class_count())
        throw ValidationError("annotation/schema mismatch: expected " +
                              std::to_string(schema.class_count()) + " classes, got " +
                              std::to_string(vectors.size()));
    for (const ConceptClass& c : schema.classes) {
        const auto& v = at(c.name);
        if (v.size() != c.cardinality())
            throw ValidationError("annotation/schema mismatch: class '" + c.name + "' has width " +
                                  std::to_string(v.size()) + ", schema says " +
                                  std::to_string(c.cardinality()));
        std::size_t ones = 0;
        for (std::uint8_t b : v) {
            if (b != 0 && b != 1) throw ValidationError("annotation entries must be 0 or 1");
            ones += b;
        }
        if (ones != 1)
            throw ValidationError("annotation for class '" + c.name + "' must be one-hot");
    }
}

nlohmann::json EpisodeAnnotation::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [cls, v] : vectors) j[cls] = v;
    return j;
}

EpisodeAnnotation EpisodeAnnotation::from_json(const nlohmann::json& j) {
    EpisodeAnnotation a;
    for (auto it = j.begin(); it != j.end(); ++it)
        a.vectors[it.key()] = it.value().get<std::vector<std::uint8_t>>();
    return a;
}

EpisodeAnnotation encode_annotation(const ConceptSchema& schema,
                                    const std::vector<std::pair<std::string, std::string>>& chosen) {
    schema.validate();
    std::set<std::string> seen;
    for (const auto& [cls, value] : chosen) {
        if (!schema.has(cls)) throw ValidationError("chosen value for unknown class: " + cls);
        if (!seen.insert(cls).second) throw ValidationError("duplicate class in choices: " + cls);
    }
    EpisodeAnnotation out;
    for (const ConceptClass& c : schema.classes) {
        const std::string* value = nullptr;
        for (const auto& [cls, v] : chosen)
            if (cls == c.name) value = &v;
        if (!value) throw ValidationError("missing choice for concept class: " + c.name);
        std::vector<std::uint8_t> onehot(c.cardinality(), 0);
        onehot[c.index_of(*value)] = 1;
        out.vectors[c.name] = std::move(onehot);
    }
    return out;
}

Tensor<float> broadcast_to_steps(const ConceptSchema& schema, const EpisodeAnnotation& annotation,
                                 std::size_t episode_length) {
    if (episode_length == 0) throw ValidationError("broadcast_to_steps: empty episode");
    annotation.validate(schema);
    Tensor<float> out(episode_length, schema.total_width());
    std::size_t col = 0;
    for (const ConceptClass& c : schema.classes) {
        const auto& v = annotation.at(c.name);
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i])
                for (std::size_t t = 0; t < episode_length; ++t) out(t, col + i) = 1.0f;
        col += c.cardinality();
    }
    return out;
}

}  // namespace cact
