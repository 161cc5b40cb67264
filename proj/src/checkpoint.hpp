#pragma once

// Single-file archive of named float64 arrays plus string metadata.

#include "tensor.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dmcodec {

struct Archive {
    struct Array {
        Shape shape;
        std::vector<double> values;
    };
    std::map<std::string, Array> arrays;
    std::map<std::string, std::string> meta;

    void put(const std::string& name, Shape shape, std::vector<double> values);
    void put(const std::string& name, const std::vector<double>& values) {
        put(name, {static_cast<int64_t>(values.size())}, values);
    }
    const Array& get(const std::string& name) const;
    bool has(const std::string& name) const { return arrays.count(name) != 0; }
    const std::string& meta_value(const std::string& key) const;

    // Parameters are stored under prefix + name.
    void put_params(const std::string& prefix, const ParamStore& store);
    // Overwrites parameter values in place; every parameter must be present
    // with a matching shape.
    void load_params(const std::string& prefix, ParamStore& store) const;
};

// Layout: "DMCK", u32 version, u32 array count, then per array u32 name
// length, name bytes, u32 rank, i64 dims, f64 values; then u32 meta count
// and length-prefixed key/value strings. Little-endian throughout.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

} // namespace dmcodec
