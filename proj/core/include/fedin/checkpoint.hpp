#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fedin/model.hpp"
#include "fedin/tensor.hpp"

namespace fedin {

// One named tensor in the flat binary checkpoint format. Layout per record:
// u32 name length, name bytes, u32 rank, u32 per-dimension sizes, then the
// float32 payload. All integers and floats are little-endian.
struct ParamRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    bool operator==(const ParamRecord&) const = default;
};

void write_records(std::ostream& out, const std::vector<ParamRecord>& records);
std::vector<ParamRecord> read_records(std::istream& in);

void save_records(const std::string& path, const std::vector<ParamRecord>& records);
std::vector<ParamRecord> load_records(const std::string& path);

void save_checkpoint(const std::string& path, const SplitModel<float>& model);

// Overwrites matching parameters in place; every record must name an existing
// parameter with an identical shape, and every parameter must be covered.
void load_checkpoint(const std::string& path, SplitModel<float>& model);

}  // namespace fedin
