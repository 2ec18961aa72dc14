#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvq/audio.hpp"
#include "rvq/errors.hpp"

namespace rvq {

enum class EntryRole { Clean, Noise };

inline const char* role_name(EntryRole r) { return r == EntryRole::Clean ? "clean" : "noise"; }

inline EntryRole role_from_name(const std::string& name) {
    if (name == "clean") return EntryRole::Clean;
    if (name == "noise") return EntryRole::Noise;
    throw ConfigError("unknown manifest role '" + name + "' (expected clean or noise)");
}

/// One dataset element: either a WAV file on disk or a generator recipe.
struct ManifestEntry {
    std::string id;
    EntryRole role = EntryRole::Clean;
    std::optional<std::string> path; // resolved relative to the manifest file
    std::optional<GeneratorSpec> generator;
};

/// Ordered dataset description loaded from a JSON-lines file. The seed is
/// supplied by the caller (experiment config), not the file, and drives the
/// per-entry generator streams.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    std::filesystem::path base_dir;

    std::vector<const ManifestEntry*> with_role(EntryRole role) const {
        std::vector<const ManifestEntry*> out;
        for (const ManifestEntry& e : entries)
            if (e.role == role) out.push_back(&e);
        return out;
    }
};

inline GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
    GeneratorSpec spec;
    if (!j.contains("kind")) throw ConfigError("generator spec missing 'kind'");
    spec.kind = generator_kind_from_name(j.at("kind").get<std::string>());
    spec.duration_s = j.value("duration_s", spec.duration_s);
    spec.amplitude = j.value("amplitude", spec.amplitude);
    spec.f0 = j.value("f0", spec.f0);
    spec.f1 = j.value("f1", spec.f1);
    spec.check();
    return spec;
}

inline nlohmann::json generator_spec_to_json(const GeneratorSpec& spec) {
    nlohmann::json j;
    j["kind"] = generator_kind_name(spec.kind);
    j["duration_s"] = spec.duration_s;
    j["amplitude"] = spec.amplitude;
    if (spec.kind == GeneratorKind::HarmonicTone || spec.kind == GeneratorKind::ChirpSweep)
        j["f0"] = spec.f0;
    if (spec.kind == GeneratorKind::ChirpSweep) j["f1"] = spec.f1;
    return j;
}

/// Parse a JSON-lines manifest: one object per line with fields `id`, `role`,
/// and either `path` or `generator`. Rejects duplicate ids, unresolvable
/// paths, unknown generator kinds, and manifests without a clean entry.
inline DatasetManifest load_manifest(const std::string& manifest_path, std::uint64_t seed = 0) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_manifest: cannot open " + manifest_path);

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.base_dir = std::filesystem::path(manifest_path).parent_path();

    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("load_manifest: " + manifest_path + ":" + std::to_string(line_no) +
                              ": " + e.what());
        }
        ManifestEntry entry;
        if (!j.contains("id")) throw ConfigError("load_manifest: entry missing 'id' at line " +
                                                 std::to_string(line_no));
        entry.id = j.at("id").get<std::string>();
        if (!seen.insert(entry.id).second)
            throw ConfigError("load_manifest: duplicate id '" + entry.id + "'");
        entry.role = role_from_name(j.value("role", "clean"));
        if (j.contains("path") == j.contains("generator"))
            throw ConfigError("load_manifest: entry '" + entry.id +
                              "' needs exactly one of 'path' or 'generator'");
        if (j.contains("path")) {
            entry.path = j.at("path").get<std::string>();
            std::filesystem::path resolved = manifest.base_dir / *entry.path;
            if (!std::filesystem::exists(resolved))
                throw ConfigError("load_manifest: entry '" + entry.id + "': missing file " +
                                  resolved.string());
        } else {
            entry.generator = generator_spec_from_json(j.at("generator"));
        }
        manifest.entries.push_back(std::move(entry));
    }
    if (manifest.with_role(EntryRole::Clean).empty())
        throw ConfigError("load_manifest: " + manifest_path + " has no clean entries");
    return manifest;
}

/// Load or synthesize the audio for one entry. Generator entries derive
/// their stream from (manifest seed, entry index) so the dataset is a pure
/// function of the manifest plus seed.
inline AudioSignal materialize_entry(const DatasetManifest& manifest, std::size_t entry_index,
                                     int sample_rate) {
    if (entry_index >= manifest.entries.size())
        throw ConfigError("materialize_entry: index out of range");
    const ManifestEntry& e = manifest.entries[entry_index];
    if (e.path) {
        AudioSignal sig = read_wav((manifest.base_dir / *e.path).string());
        return sig;
    }
    Rng rng = Rng::seeded(manifest.seed).split(entry_index);
    return generate(*e.generator, sample_rate, rng.next_u64());
}

} // namespace rvq
