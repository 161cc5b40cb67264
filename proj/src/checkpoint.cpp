#include "checkpoint.hpp"

#include "errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dmcodec {

namespace {

constexpr uint32_t kVersion = 1;

class Writer {
public:
    void u32(uint32_t v) { raw(&v, 4); }
    void i64(int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    std::vector<unsigned char> bytes;
};

class Reader {
public:
    Reader(const std::vector<unsigned char>& b, std::string origin) : bytes_(b), origin_(std::move(origin)) {}
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    int64_t i64() {
        int64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void raw(void* p, size_t n) {
        need(n);
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(size_t n) const {
        if (pos_ + n > bytes_.size()) throw DataError(origin_ + ": truncated checkpoint");
    }
    const std::vector<unsigned char>& bytes_;
    std::string origin_;
    size_t pos_ = 0;
};

static_assert(sizeof(double) == 8);
static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

} // namespace

void Archive::put(const std::string& name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DomainError("archive entry " + name + ": shape does not match value count");
    }
    arrays[name] = Array{std::move(shape), std::move(values)};
}

const Archive::Array& Archive::get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint is missing '" + name + "'");
    return it->second;
}

const std::string& Archive::meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("checkpoint is missing metadata '" + key + "'");
    return it->second;
}

void Archive::put_params(const std::string& prefix, const ParamStore& store) {
    for (const auto& [name, t] : store.all()) put(prefix + name, t.shape(), t.values());
}

void Archive::load_params(const std::string& prefix, ParamStore& store) const {
    for (auto& [name, t] : store.all()) {
        const Array& a = get(prefix + name);
        if (a.shape != t.shape()) {
            throw DataError("checkpoint entry " + prefix + name + " has shape " + shape_str(a.shape) +
                            ", model expects " + shape_str(t.shape()));
        }
        t.values() = a.values;
    }
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
    Writer w;
    w.raw("DMCK", 4);
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(archive.arrays.size()));
    for (const auto& [name, a] : archive.arrays) {
        w.str(name);
        w.u32(static_cast<uint32_t>(a.shape.size()));
        for (int64_t d : a.shape) w.i64(d);
        for (double v : a.values) w.f64(v);
    }
    w.u32(static_cast<uint32_t>(archive.meta.size()));
    for (const auto& [k, v] : archive.meta) {
        w.str(k);
        w.str(v);
    }
    // Write to a sibling file first so an interrupted save never leaves a
    // truncated checkpoint behind.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(bytes, path.string());
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "DMCK", 4) != 0) throw DataError(path.string() + ": not a checkpoint");
    const uint32_t version = r.u32();
    if (version != kVersion) throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    Archive a;
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.i64();
        const int64_t count = shape_numel(shape);
        if (count < 0 || count > static_cast<int64_t>(bytes.size())) throw DataError(path.string() + ": bad array size");
        std::vector<double> values(static_cast<size_t>(count));
        for (auto& v : values) v = r.f64();
        a.arrays[name] = Archive::Array{std::move(shape), std::move(values)};
    }
    const uint32_t m = r.u32();
    for (uint32_t i = 0; i < m; ++i) {
        std::string k = r.str();
        a.meta[k] = r.str();
    }
    if (!r.done()) throw DataError(path.string() + ": trailing bytes after checkpoint");
    return a;
}

} // namespace dmcodec
