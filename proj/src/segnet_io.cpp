#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tmagrade/segnet.hpp"

static_assert(std::endian::native == std::endian::little, "weights I/O assumes a little-endian host");

namespace tma {
namespace {

constexpr char kMagic[4] = {'T', 'M', 'A', 'W'};
constexpr char kAdamMagic[4] = {'A', 'D', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
constexpr std::uint8_t dtype_tag() {
    return std::is_same_v<T, float> ? 0 : 1;
}

std::size_t dtype_size(std::uint8_t tag) { return tag == 0 ? 4 : 8; }

class Writer {
public:
    template <class V>
    void put(V v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(V));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    const std::vector<char>& data() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
    template <class V>
    V get() {
        V v;
        need(sizeof(V));
        std::memcpy(&v, buf_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    const char* take(std::size_t n) {
        need(n);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw Error("truncated weights file");
    }
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream o;
    o << '[';
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << ']';
    return o.str();
}

template <class Dst>
void decode_payload(const char* src, std::uint8_t tag, std::vector<Dst>& out) {
    if (tag == 0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            float f;
            std::memcpy(&f, src + 4 * i, 4);
            out[i] = static_cast<Dst>(f);
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            double d;
            std::memcpy(&d, src + 8 * i, 8);
            out[i] = static_cast<Dst>(d);
        }
    }
}

}  // namespace

template <class T>
void save_weights(const std::filesystem::path& path, const UNetParams<T>& params, const AdamState<T>* adam,
                  int epoch) {
    Writer w;
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& t : params.tensors) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.spec.name.size()));
        w.bytes(t.spec.name.data(), t.spec.name.size());
        w.put<std::uint8_t>(dtype_tag<T>());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.spec.shape.size()));
        for (int d : t.spec.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        w.bytes(t.data.data(), t.data.size() * sizeof(T));
    }
    if (adam) {
        w.bytes(kAdamMagic, 4);
        w.put<std::uint8_t>(dtype_tag<T>());
        w.put<std::uint64_t>(static_cast<std::uint64_t>(adam->step));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(epoch));
        std::uint32_t count = 0;
        for (const auto& t : params.tensors) count += t.spec.trainable();
        w.put<std::uint32_t>(count);
        if (adam->m.size() != params.tensors.size() || adam->v.size() != params.tensors.size())
            throw Error("save_weights: Adam state does not match parameters");
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            if (!params.tensors[i].spec.trainable()) continue;
            if (adam->m[i].size() != params.tensors[i].data.size() || adam->v[i].size() != params.tensors[i].data.size())
                throw Error("save_weights: Adam state does not match layer '" + params.tensors[i].spec.name + "'");
            w.bytes(adam->m[i].data(), adam->m[i].size() * sizeof(T));
            w.bytes(adam->v[i].data(), adam->v[i].size() * sizeof(T));
        }
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + path.string() + "'");
        out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
        if (!out) throw Error("write failed for '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

template <class T>
WeightsFile<T> load_weights(const std::filesystem::path& path, const UNetConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open weights file '" + path.string() + "'");
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw Error("not a weights file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw Error("unsupported weights version " + std::to_string(version));
    const auto layout = param_layout(config);
    const auto count = r.get<std::uint32_t>();

    // Everything is parsed and checked into a fresh object; nothing is returned on failure.
    WeightsFile<T> wf;
    wf.params.config = config;
    wf.params.tensors.reserve(layout.size());
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>();
        std::string name(r.take(name_len), name_len);
        const auto tag = r.get<std::uint8_t>();
        if (tag > 1) throw Error("layer '" + name + "': unknown dtype tag " + std::to_string(tag));
        const auto rank = r.get<std::uint8_t>();
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(r.get<std::uint32_t>());
            numel *= static_cast<std::size_t>(d);
        }
        if (i >= layout.size()) throw Error("unexpected layer '" + name + "': file has more layers than the network");
        const auto& spec = layout[i];
        if (name != spec.name)
            throw Error("layer " + std::to_string(i) + ": expected '" + spec.name + "', found '" + name + "'");
        if (shape != spec.shape)
            throw Error("shape mismatch for layer '" + name + "': expected " + shape_str(spec.shape) + ", found " +
                        shape_str(shape));
        const char* payload = r.take(numel * dtype_size(tag));
        ParamTensor<T> t{spec, std::vector<T>(numel)};
        decode_payload(payload, tag, t.data);
        wf.params.tensors.push_back(std::move(t));
    }
    if (count != layout.size())
        throw Error("weights file has " + std::to_string(count) + " layers, network expects " +
                    std::to_string(layout.size()) + " (first missing: '" + layout[count].name + "')");

    if (!r.at_end()) {
        if (std::memcmp(r.take(4), kAdamMagic, 4) != 0) throw Error("trailing data in weights file (bad Adam magic)");
        const auto tag = r.get<std::uint8_t>();
        if (tag > 1) throw Error("Adam section: unknown dtype tag");
        AdamState<T> st;
        st.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
        wf.epoch = static_cast<int>(r.get<std::uint32_t>());
        const auto n = r.get<std::uint32_t>();
        std::uint32_t expected = 0;
        for (const auto& s : layout) expected += s.trainable();
        if (n != expected) throw Error("Adam section: tensor count mismatch");
        st.m.assign(layout.size(), {});
        st.v.assign(layout.size(), {});
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (!layout[i].trainable()) continue;
            const std::size_t numel = layout[i].numel();
            st.m[i].resize(numel);
            st.v[i].resize(numel);
            decode_payload(r.take(numel * dtype_size(tag)), tag, st.m[i]);
            decode_payload(r.take(numel * dtype_size(tag)), tag, st.v[i]);
        }
        if (!r.at_end()) throw Error("trailing data after Adam section");
        wf.adam = std::move(st);
    }
    return wf;
}

template void save_weights<float>(const std::filesystem::path&, const UNetParams<float>&, const AdamState<float>*, int);
template void save_weights<double>(const std::filesystem::path&, const UNetParams<double>&, const AdamState<double>*,
                                   int);
template WeightsFile<float> load_weights<float>(const std::filesystem::path&, const UNetConfig&);
template WeightsFile<double> load_weights<double>(const std::filesystem::path&, const UNetConfig&);

}  // namespace tma
