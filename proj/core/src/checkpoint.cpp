#include "fedin/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "fedin/errors.hpp"

namespace fedin {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IngestError(std::string("checkpoint truncated while reading ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in, const char* what) {
    const uint32_t bits = get_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_records(std::ostream& out, const std::vector<ParamRecord>& records) {
    for (const auto& rec : records) {
        size_t expect = 1;
        for (int d : rec.shape) expect *= static_cast<size_t>(d);
        if (expect != rec.values.size()) {
            throw ContractError("record '" + rec.name + "' has " +
                                std::to_string(rec.values.size()) + " values for shape " +
                                shape_str(rec.shape));
        }
        put_u32(out, static_cast<uint32_t>(rec.name.size()));
        out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
        put_u32(out, static_cast<uint32_t>(rec.shape.size()));
        for (int d : rec.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : rec.values) put_f32(out, v);
    }
    if (!out) throw IngestError("checkpoint write failed");
}

std::vector<ParamRecord> read_records(std::istream& in) {
    std::vector<ParamRecord> records;
    while (true) {
        in.peek();
        if (in.eof()) break;
        ParamRecord rec;
        const uint32_t name_len = get_u32(in, "name length");
        if (name_len > (1u << 20)) throw IngestError("checkpoint record name length implausible");
        rec.name.resize(name_len);
        if (!in.read(rec.name.data(), name_len))
            throw IngestError("checkpoint truncated while reading name");
        const uint32_t rank = get_u32(in, "shape rank");
        if (rank > 8) throw IngestError("checkpoint record rank implausible");
        size_t count = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint32_t d = get_u32(in, "shape dim");
            rec.shape.push_back(static_cast<int>(d));
            count *= d;
        }
        rec.values.reserve(count);
        for (size_t i = 0; i < count; ++i) rec.values.push_back(get_f32(in, "payload"));
        records.push_back(std::move(rec));
    }
    return records;
}

void save_records(const std::string& path, const std::vector<ParamRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open '" + path + "' for writing");
    write_records(out, records);
}

std::vector<ParamRecord> load_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path + "' for reading");
    return read_records(in);
}

void save_checkpoint(const std::string& path, const SplitModel<float>& model) {
    std::vector<ParamRecord> records;
    records.reserve(model.params.size());
    for (const auto& p : model.params)
        records.push_back({p.name, p.tensor.shape, p.tensor.values});
    save_records(path, records);
}

void load_checkpoint(const std::string& path, SplitModel<float>& model) {
    const std::vector<ParamRecord> records = load_records(path);
    std::set<std::string> seen;
    for (const auto& rec : records) {
        bool known = false;
        for (const auto& p : model.params) known = known || p.name == rec.name;
        if (!known) throw IngestError("checkpoint names unknown parameter '" + rec.name + "'");
        Tensor<float>& dst = model.param(rec.name);
        if (dst.shape != rec.shape) {
            throw IngestError("checkpoint shape " + shape_str(rec.shape) + " for '" + rec.name +
                              "' does not match model shape " + shape_str(dst.shape));
        }
        dst.values = rec.values;
        seen.insert(rec.name);
    }
    for (const auto& p : model.params) {
        if (!seen.count(p.name))
            throw IngestError("checkpoint is missing parameter '" + p.name + "'");
    }
}

}  // namespace fedin
