#include "favae/checkpoint.hpp"

#include <cstring>

#include "favae/fsutil.hpp"

namespace favae {

namespace {

constexpr char kMagic[6] = {'F', 'A', 'V', 'A', 'E', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::string& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw DataError("tensor file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[pos + i]);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = b.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void NamedTensors::add(const std::string& name, TensorF t) {
    if (has(name)) throw ArgumentError(msg("duplicate tensor name '", name, "'"));
    items.emplace_back(name, std::move(t));
}

bool NamedTensors::has(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return true;
    return false;
}

const TensorF& NamedTensors::get(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    throw DataError(msg("tensor '", name, "' not found in file"));
}

double NamedTensors::get_scalar(const std::string& name) const {
    const TensorF& t = get(name);
    if (t.numel() != 1) throw DataError(msg("tensor '", name, "' is not a scalar"));
    return static_cast<double>(t.data[0]);
}

void NamedTensors::add_scalar(const std::string& name, double v) {
    add(name, TensorF::scalar(static_cast<float>(v)));
}

std::string serialize_tensors(const NamedTensors& t) {
    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(t.items.size()));
    for (const auto& [name, tensor] : t.items) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (int d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
        out.reserve(out.size() + tensor.data.size() * 4);
        for (float f : tensor.data) put_f32(out, f);
    }
    return out;
}

NamedTensors deserialize_tensors(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a FAVAE1 tensor file (bad magic)");
    Reader r{bytes, sizeof(kMagic)};
    const std::uint32_t count = r.u32();
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const std::uint32_t rank = r.u32();
        std::vector<int> shape(rank);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(r.u32());
            numel *= d;
        }
        TensorF t;
        t.shape = shape;
        t.data.resize(numel);
        for (std::int64_t k = 0; k < numel; ++k) t.data[k] = r.f32();
        out.items.emplace_back(name, std::move(t));
    }
    return out;
}

void save_tensors(const std::string& path, const NamedTensors& t) {
    write_file_atomic(path, serialize_tensors(t));
}

NamedTensors load_tensors(const std::string& path) { return deserialize_tensors(read_file(path)); }

}  // namespace favae
