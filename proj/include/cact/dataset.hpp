#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cact/concept_data.hpp"
#include "cact/tensor.hpp"

namespace cact {

struct DatasetDims {
    std::size_t d_s = 0;
    std::size_t d_a = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t cameras = 0;

    std::size_t frame_bytes() const { return height * width * 3; }
    bool operator==(const DatasetDims&) const = default;
};

struct Episode {
    Tensor<float> proprio;  // T x d_s
    Tensor<float> actions;  // T x d_a
    // Per camera: T frames of H*W*3 unsigned bytes.
    std::vector<std::vector<std::uint8_t>> images;
    EpisodeAnnotation annotation;
    std::string scenario_id;

    std::size_t length() const { return proprio.rows(); }
    const std::uint8_t* frame(std::size_t cam, std::size_t t, const DatasetDims& dims) const {
        return images[cam].data() + t * dims.frame_bytes();
    }
};

struct Dataset {
    ConceptSchema schema;
    DatasetDims dims;
    std::vector<Episode> episodes;

    void validate() const;
};

inline constexpr const char* kDatasetVersion = "1";

// Directory layout: manifest.json at the root plus one subdirectory per
// episode holding proprio.f32, actions.f32, cam<i>.u8 and meta.json. Array
// files are raw little-endian payloads; roundtrips are bit-exact.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace cact
