#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "kpvp/pipeline.hpp"

namespace kpvp {

namespace {

constexpr char kMagic[8] = {'K', 'P', 'V', 'P', 'B', 'N', 'D', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& buf, std::uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_bundle(ModelBundle& bundle, const std::filesystem::path& path) {
    std::string buf;
    buf.append(kMagic, 8);
    put_u32(buf, kFormatVersion);
    put_u64(buf, static_cast<std::uint64_t>(bundle.stage1_steps));
    put_u64(buf, static_cast<std::uint64_t>(bundle.stage2_steps));
    const std::string hp_json = nlohmann::json(bundle.hp).dump();
    put_u32(buf, static_cast<std::uint32_t>(hp_json.size()));
    buf += hp_json;

    auto params = bundle.all_params();
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        const Matrix<Real>& m = *params.values[i];
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put_u32(buf, static_cast<std::uint32_t>(m.rows()));
        put_u32(buf, static_cast<std::uint32_t>(m.cols()));
        buf.append(reinterpret_cast<const char*>(m.data()), sizeof(Real) * m.size());
    }
    put_u64(buf, fnv1a(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_bundle: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("save_bundle: write failure for " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_bundle: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 8 + 4 + 8) throw DataError("load_bundle: truncated file " + path.string());
    const std::uint64_t stored_digest = [&] {
        std::uint64_t v;
        std::memcpy(&v, buf.data() + buf.size() - 8, 8);
        return v;
    }();
    if (fnv1a(buf.data(), buf.size() - 8) != stored_digest)
        throw DataError("load_bundle: digest mismatch (corrupt or truncated): " + path.string());

    Reader r{buf};
    if (r.bytes(8) != std::string(kMagic, 8)) throw DataError("load_bundle: bad magic in " + path.string());
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw DataError("load_bundle: unsupported format version " + std::to_string(version));
    const long stage1_steps = static_cast<long>(r.u64());
    const long stage2_steps = static_cast<long>(r.u64());
    const std::string hp_json = r.bytes(r.u32());
    HyperParams hp = nlohmann::json::parse(hp_json).get<HyperParams>();

    ModelBundle bundle = ModelBundle::make(hp, 0);
    bundle.stage1_steps = stage1_steps;
    bundle.stage2_steps = stage2_steps;
    auto params = bundle.all_params();
    const std::uint32_t count = r.u32();
    if (count != params.size()) throw DataError("load_bundle: tensor count mismatch in " + path.string());
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (name != params.names[i]) throw DataError("load_bundle: unexpected tensor '" + name + "'");
        Matrix<Real>& m = *params.values[i];
        if (rows != m.rows() || cols != m.cols())
            throw DataError("load_bundle: shape mismatch for tensor '" + name + "'");
        const std::string data = r.bytes(sizeof(Real) * m.size());
        std::memcpy(m.data(), data.data(), data.size());
    }
    return bundle;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("file_digest: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    return fnv1a(buf.data(), buf.size());
}

std::uint64_t detector_digest(ModelBundle& bundle) {
    nn::ParamList<Real> p;
    bundle.stage1.detector.collect(p, "detector");
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < p.size(); ++i)
        h = fnv1a(p.values[i]->data(), sizeof(Real) * p.values[i]->size(), h);
    return h;
}

}  // namespace kpvp
