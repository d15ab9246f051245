#pragma once

// Checkpoint container: an 8-byte magic, a little-endian u64 header length,
// a JSON header (config + tensor manifest + payload checksum), then the raw
// 64-bit-float tensor payloads in manifest order. Corrupted bytes surface as
// ChecksumMismatch; structural disagreement (wrong magic/version, manifest
// not matching the config) surfaces as VersionMismatch.

#include <cstring>
#include <string>
#include <vector>

#include "interlace/common.hpp"
#include "interlace/model.hpp"

namespace interlace {

namespace ckpt {

constexpr char kMagic[8] = {'I', 'L', 'A', 'C', 'M', 'D', 'L', '1'};
constexpr int64_t kFormatVersion = 1;

}  // namespace ckpt

// Content hash of a model: config plus every parameter's name and raw bytes.
inline std::string model_fingerprint(const TransformerModel& model) {
    Fnv1a h;
    h.update_str(model.config().to_json().dump());
    for (const auto& [name, t] : model.named_params()) {
        h.update_str(name);
        h.update(t.data(), static_cast<size_t>(t.size()) * sizeof(double));
    }
    return h.hex();
}

inline void save_model(const TransformerModel& model, const std::string& path) {
    const auto params = model.named_params();

    std::string payload;
    Json manifest = Json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : params) {
        if (!t.all_finite()) throw NonFiniteValue("refusing to save non-finite tensor " + name);
        Json entry;
        entry["name"] = name;
        entry["rows"] = t.rows();
        entry["cols"] = t.cols();
        entry["offset"] = offset;
        manifest.push_back(entry);
        const size_t bytes = static_cast<size_t>(t.size()) * sizeof(double);
        payload.append(reinterpret_cast<const char*>(t.data()), bytes);
        offset += static_cast<int64_t>(bytes);
    }

    Fnv1a checksum;
    checksum.update(payload.data(), payload.size());

    Json header;
    header["format_version"] = ckpt::kFormatVersion;
    header["config"] = model.config().to_json();
    header["tensors"] = manifest;
    header["payload_checksum"] = checksum.hex();
    const std::string header_bytes = header.dump();

    std::string out;
    out.reserve(16 + header_bytes.size() + payload.size());
    out.append(ckpt::kMagic, sizeof(ckpt::kMagic));
    uint64_t hlen = header_bytes.size();
    char hlen_le[8];
    std::memcpy(hlen_le, &hlen, 8);
    out.append(hlen_le, 8);
    out += header_bytes;
    out += payload;
    write_file(path, out);
}

inline TransformerModel load_model(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), ckpt::kMagic, sizeof(ckpt::kMagic)) != 0)
        throw VersionMismatch("not a model checkpoint: " + path);
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    if (16 + hlen > bytes.size())
        throw ChecksumMismatch("checkpoint header extends past end of file: " + path);

    Json header;
    try {
        header = Json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::parse_error&) {
        throw ChecksumMismatch("checkpoint header is not valid JSON: " + path);
    }
    int64_t version = 0;
    try {
        version = header.at("format_version").get<int64_t>();
    } catch (const nlohmann::json::exception&) {
        throw VersionMismatch("checkpoint header missing format_version: " + path);
    }
    if (version != ckpt::kFormatVersion)
        throw VersionMismatch("unsupported checkpoint format_version " + std::to_string(version));

    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(header.at("config"));
    } catch (const Error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw VersionMismatch(std::string("checkpoint config unreadable: ") + e.what());
    }

    // The manifest must agree exactly with what the config implies.
    TransformerModel model = TransformerModel::skeleton(cfg);
    const auto params = model.named_params();
    const Json& manifest = header.at("tensors");
    if (!manifest.is_array() || manifest.size() != params.size())
        throw VersionMismatch("checkpoint manifest does not match config-implied tensor set");
    int64_t expect_offset = 0;
    for (size_t i = 0; i < params.size(); i++) {
        const auto& [name, t] = params[i];
        const Json& entry = manifest[i];
        if (entry.value("name", std::string()) != name ||
            entry.value("rows", int64_t(-1)) != t.rows() ||
            entry.value("cols", int64_t(-1)) != t.cols() ||
            entry.value("offset", int64_t(-1)) != expect_offset)
            throw VersionMismatch("checkpoint manifest entry " + std::to_string(i) +
                                  " disagrees with config-implied tensor " + name);
        expect_offset += t.size() * static_cast<int64_t>(sizeof(double));
    }

    const std::string payload = bytes.substr(16 + hlen);
    if (static_cast<int64_t>(payload.size()) != expect_offset)
        throw ChecksumMismatch("checkpoint payload is " + std::to_string(payload.size()) +
                               " bytes, expected " + std::to_string(expect_offset));
    Fnv1a checksum;
    checksum.update(payload.data(), payload.size());
    if (checksum.hex() != header.value("payload_checksum", std::string()))
        throw ChecksumMismatch("checkpoint payload checksum mismatch: " + path);

    size_t pos = 0;
    for (const auto& [name, t] : params) {
        Tensor& dst = model.param(name);
        std::memcpy(dst.data(), payload.data() + pos, static_cast<size_t>(dst.size()) * sizeof(double));
        pos += static_cast<size_t>(dst.size()) * sizeof(double);
    }
    return model;
}

}  // namespace interlace
