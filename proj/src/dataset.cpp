#include "cact/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cact/common.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace cact {

namespace {

void write_bytes(const fs::path& p, const void* data, std::size_t bytes) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("short write " + p.string());
}

void read_bytes(const fs::path& p, void* data, std::size_t bytes) {
    std::ifstream f(p, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open " + p.string());
    const auto have = static_cast<std::size_t>(f.tellg());
    if (have != bytes)
        throw IoError("truncated array file " + p.string() + ": expected " +
                      std::to_string(bytes) + " bytes, found " + std::to_string(have));
    f.seekg(0);
    f.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("read failure " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open " + p.string());
    nlohmann::json j;
    f >> j;
    return j;
}

std::string episode_dir_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ep%05zu", i);
    return buf;
}

}  // namespace

void Dataset::validate() const {
    schema.validate();
    for (const Episode& e : episodes) {
        if (e.length() < 1) throw ValidationError("episode with empty time axis");
        if (e.proprio.cols() != dims.d_s || e.actions.cols() != dims.d_a ||
            e.actions.rows() != e.length())
            throw ValidationError("episode array dims do not match dataset dims");
        if (e.images.size() != dims.cameras)
            throw ValidationError("episode camera count mismatch");
        for (const auto& cam : e.images)
            if (cam.size() != e.length() * dims.frame_bytes())
                throw ValidationError("episode image stack size mismatch");
        e.annotation.validate(schema);
    }
}

void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    fs::create_directories(path);
    nlohmann::json manifest;
    manifest["version"] = kDatasetVersion;
    manifest["schema"] = ds.schema.to_json();
    manifest["dims"] = {{"d_s", ds.dims.d_s},
                        {"d_a", ds.dims.d_a},
                        {"H", ds.dims.height},
                        {"W", ds.dims.width},
                        {"cameras", ds.dims.cameras}};
    manifest["episodes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
        const Episode& e = ds.episodes[i];
        const std::string name = episode_dir_name(i);
        manifest["episodes"].push_back(name);
        const fs::path dir = fs::path(path) / name;
        fs::create_directories(dir);
        write_bytes(dir / "proprio.f32", e.proprio.data(), e.proprio.size() * sizeof(float));
        write_bytes(dir / "actions.f32", e.actions.data(), e.actions.size() * sizeof(float));
        for (std::size_t c = 0; c < e.images.size(); ++c)
            write_bytes(dir / ("cam" + std::to_string(c) + ".u8"), e.images[c].data(),
                        e.images[c].size());
        nlohmann::json meta;
        meta["annotation"] = e.annotation.to_json();
        meta["scenario_id"] = e.scenario_id;
        meta["T"] = e.length();
        std::ofstream mf(dir / "meta.json");
        mf << meta.dump(2) << "\n";
        if (!mf) throw IoError("cannot write episode meta");
    }
    std::ofstream f(fs::path(path) / "manifest.json");
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError("cannot write dataset manifest");
}

Dataset load_dataset(const std::string& path) {
    const nlohmann::json manifest = read_json(fs::path(path) / "manifest.json");
    const std::string version = manifest.at("version").get<std::string>();
    if (version != kDatasetVersion)
        throw IoError("dataset version mismatch: found '" + version + "', expected '" +
                      kDatasetVersion + "'");
    Dataset ds;
    ds.schema = ConceptSchema::from_json(manifest.at("schema"));
    const auto& dims = manifest.at("dims");
    ds.dims = {dims.at("d_s").get<std::size_t>(), dims.at("d_a").get<std::size_t>(),
               dims.at("H").get<std::size_t>(), dims.at("W").get<std::size_t>(),
               dims.at("cameras").get<std::size_t>()};
    for (const auto& name : manifest.at("episodes")) {
        const fs::path dir = fs::path(path) / name.get<std::string>();
        const nlohmann::json meta = read_json(dir / "meta.json");
        Episode e;
        const auto T = meta.at("T").get<std::size_t>();
        e.proprio = Tensor<float>(T, ds.dims.d_s);
        e.actions = Tensor<float>(T, ds.dims.d_a);
        read_bytes(dir / "proprio.f32", e.proprio.data(), e.proprio.size() * sizeof(float));
        read_bytes(dir / "actions.f32", e.actions.data(), e.actions.size() * sizeof(float));
        e.images.resize(ds.dims.cameras);
        for (std::size_t c = 0; c < ds.dims.cameras; ++c) {
            e.images[c].resize(T * ds.dims.frame_bytes());
            read_bytes(dir / ("cam" + std::to_string(c) + ".u8"), e.images[c].data(),
                       e.images[c].size());
        }
        e.annotation = EpisodeAnnotation::from_json(meta.at("annotation"));
        e.scenario_id = meta.at("scenario_id").get<std::string>();
        ds.episodes.push_back(std::move(e));
    }
    ds.validate();
    return ds;
}

}  // namespace cact
