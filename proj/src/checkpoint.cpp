#include "stlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace stlm {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'S', 'T', 'L', 'M', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian raw floats");

} // namespace

void write_checkpoint(const std::string& path, const Checkpoint& cp) {
    json header;
    header["config"] = json::parse(dump_config(cp.config));
    header["iteration"] = cp.iteration;
    header["tensors"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : cp.tensors) {
        json rec;
        rec["name"] = t.name;
        rec["dtype"] = "f32";
        rec["dims"] = t.dims;
        rec["offset"] = offset;
        header["tensors"].push_back(rec);
        offset += t.data.size() * sizeof(float);
    }
    const std::string header_text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    const std::uint64_t header_len = header_text.size();
    os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& t : cp.tensors)
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!os) throw DataError("failed while writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);

    char magic[5];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError(path + ": not a STLM1 checkpoint");
    std::uint64_t header_len = 0;
    if (!is.read(reinterpret_cast<char*>(&header_len), sizeof(header_len)))
        throw FormatError(path + ": truncated header length");
    std::string header_text(header_len, '\0');
    if (!is.read(header_text.data(), static_cast<std::streamsize>(header_len)))
        throw FormatError(path + ": truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": bad header JSON: " + e.what());
    }

    Checkpoint cp;
    cp.config = parse_config(header.at("config").dump(), {});
    cp.iteration = header.at("iteration").get<int>();
    for (const auto& rec : header.at("tensors")) {
        Checkpoint::TensorRecord t;
        t.name = rec.at("name").get<std::string>();
        if (rec.at("dtype").get<std::string>() != "f32")
            throw FormatError(path + ": tensor " + t.name + " has unsupported dtype");
        t.dims = rec.at("dims").get<Shape>();
        t.data.resize(static_cast<size_t>(shape_numel(t.dims)));
        cp.tensors.push_back(std::move(t));
    }
    // offsets are sequential by construction; read payloads in order
    for (auto& t : cp.tensors) {
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float))))
            throw FormatError(path + ": truncated payload for tensor " + t.name);
    }
    return cp;
}

Checkpoint make_checkpoint(const RunConfig& cfg, int iteration, const ParamStore<float>& params,
                           const AdamW<float>* opt) {
    Checkpoint cp;
    cp.config = cfg;
    cp.iteration = iteration;
    for (const auto& [name, t] : params.unique())
        cp.tensors.push_back({name, t->shape, t->values});
    if (opt) {
        for (const auto& e : opt->entries()) {
            cp.tensors.push_back({"opt.m." + e.name, e.param->shape, e.m});
            cp.tensors.push_back({"opt.v." + e.name, e.param->shape, e.v});
        }
    }
    return cp;
}

void restore_checkpoint(const Checkpoint& cp, ParamStore<float>& params, AdamW<float>* opt) {
    for (const auto& [name, t] : params.unique()) {
        const auto* rec = cp.find(name);
        if (!rec) throw FormatError("checkpoint is missing tensor " + name);
        if (rec->dims != t->shape)
            throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(rec->dims) +
                              ", model expects " + shape_str(t->shape));
        t->values = rec->data;
    }
    if (opt) {
        for (auto& e : opt->entries()) {
            const auto* m = cp.find("opt.m." + e.name);
            const auto* v = cp.find("opt.v." + e.name);
            if (!m || !v) throw FormatError("checkpoint has no optimizer moments for " + e.name);
            if (m->dims != e.param->shape || v->dims != e.param->shape)
                throw FormatError("checkpoint moments for " + e.name + " have the wrong shape");
            e.m = m->data;
            e.v = v->data;
        }
        opt->set_step_count(cp.iteration);
    }
}

} // namespace stlm
