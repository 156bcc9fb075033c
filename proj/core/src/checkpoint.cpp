#include "odpg/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "odpg/image.hpp"

namespace odpg {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'O', 'D', 'P', 'G', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

std::uint64_t read_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

void append_floats(std::string& out, const float* data, std::size_t n) {
    static_assert(sizeof(float) == 4);
    const std::size_t at = out.size();
    out.resize(at + 4 * n);
    std::memcpy(out.data() + at, data, 4 * n);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct ParsedHeader {
    json doc;
    std::size_t payload_offset = 0;
};

ParsedHeader parse_header(const std::string& bytes, const std::string& path) {
    if (bytes.size() < 17 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
        throw IntegrityError("checkpoint: bad magic in " + path);
    }
    const auto version = read_u32(bytes, 5);
    if (version != kFormatVersion) {
        throw IntegrityError("checkpoint: unsupported format version " +
                             std::to_string(version) + " in " + path);
    }
    const auto header_len = read_u64(bytes, 9);
    if (bytes.size() < 17 + header_len) {
        throw IntegrityError("checkpoint: truncated header in " + path);
    }
    ParsedHeader out;
    try {
        out.doc = json::parse(bytes.substr(17, header_len));
    } catch (const json::exception& e) {
        throw IntegrityError("checkpoint: header parse failure in " + path + ": " + e.what());
    }
    out.payload_offset = 17 + header_len;
    return out;
}

CheckpointMeta meta_from_header(const json& doc) {
    CheckpointMeta meta;
    meta.format_version = doc.at("format_version").get<int>();
    meta.config_text = doc.at("config").get<std::string>();
    meta.step = doc.at("step").get<std::int64_t>();
    meta.rng_state = doc.at("rng").get<std::string>();
    if (doc.contains("extras")) {
        for (const auto& [k, v] : doc.at("extras").items()) {
            meta.extras[k] = v.get<double>();
        }
    }
    return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params, const Adam* optimizer,
                     const CheckpointMeta& meta) {
    std::string payload;
    json table = json::array();
    for (const auto& [name, p] : params) {
        json row;
        row["name"] = name;
        row["shape"] = p.shape();
        table.push_back(row);
        append_floats(payload, p.data(), static_cast<std::size_t>(p.numel()));
    }

    json adam_doc;
    if (optimizer) {
        adam_doc["present"] = true;
        adam_doc["lr"] = optimizer->hyper().lr;
        adam_doc["beta1"] = optimizer->hyper().beta1;
        adam_doc["beta2"] = optimizer->hyper().beta2;
        adam_doc["eps"] = optimizer->hyper().eps;
        adam_doc["t"] = optimizer->step_count();
        json names = json::array();
        for (std::size_t i = 0; i < optimizer->size(); ++i) {
            names.push_back(optimizer->name(i));
            append_floats(payload, optimizer->moment1(i).data(), optimizer->moment1(i).size());
            append_floats(payload, optimizer->moment2(i).data(), optimizer->moment2(i).size());
        }
        adam_doc["params"] = names;
    } else {
        adam_doc["present"] = false;
    }

    json header;
    header["format_version"] = kFormatVersion;
    header["config"] = meta.config_text;
    header["step"] = meta.step;
    header["rng"] = meta.rng_state;
    header["params"] = table;
    header["adam"] = adam_doc;
    json extras = json::object();
    for (const auto& [k, v] : meta.extras) extras[k] = v;
    header["extras"] = extras;
    header["payload_sha256"] = sha256_bytes(payload.data(), payload.size());

    const std::string header_text = header.dump();
    std::string bytes;
    bytes.append(kMagic, 5);
    append_u32(bytes, kFormatVersion);
    append_u64(bytes, header_text.size());
    bytes += header_text;
    bytes += payload;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open for writing " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    const auto bytes = read_file(path);
    const auto parsed = parse_header(bytes, path);
    return meta_from_header(parsed.doc);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamMap& params, Adam* optimizer) {
    const auto bytes = read_file(path);
    const auto parsed = parse_header(bytes, path);
    const json& doc = parsed.doc;

    const std::string payload = bytes.substr(parsed.payload_offset);
    const auto want_sha = doc.at("payload_sha256").get<std::string>();
    if (sha256_bytes(payload.data(), payload.size()) != want_sha) {
        throw IntegrityError("checkpoint: payload checksum mismatch in " + path);
    }

    const auto& table = doc.at("params");
    if (table.size() != params.size()) {
        throw IntegrityError("checkpoint: parameter count mismatch in " + path + " (file has " +
                             std::to_string(table.size()) + ", model has " +
                             std::to_string(params.size()) + ")");
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto name = table[i].at("name").get<std::string>();
        const auto shape = table[i].at("shape").get<Shape>();
        auto& [pname, p] = params[i];
        if (name != pname || shape != p.shape()) {
            throw IntegrityError("checkpoint: parameter mismatch at index " + std::to_string(i) +
                                 ": file has " + name + shape_str(shape) + ", model has " +
                                 pname + shape_str(p.shape()));
        }
        const std::size_t n = static_cast<std::size_t>(p.numel());
        if (off + 4 * n > payload.size()) {
            throw IntegrityError("checkpoint: payload too short in " + path);
        }
        std::memcpy(p.data(), payload.data() + off, 4 * n);
        off += 4 * n;
    }

    const auto& adam_doc = doc.at("adam");
    if (optimizer) {
        if (!adam_doc.at("present").get<bool>()) {
            throw IntegrityError("checkpoint: no optimizer state stored in " + path);
        }
        const auto names = adam_doc.at("params").get<std::vector<std::string>>();
        if (names.size() != optimizer->size()) {
            throw IntegrityError("checkpoint: optimizer parameter count mismatch in " + path);
        }
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] != optimizer->name(i)) {
                throw IntegrityError("checkpoint: optimizer parameter order mismatch at " +
                                     std::to_string(i));
            }
            auto& m = optimizer->moment1_mut(i);
            auto& v = optimizer->moment2_mut(i);
            if (off + 8 * m.size() > payload.size()) {
                throw IntegrityError("checkpoint: payload too short in " + path);
            }
            std::memcpy(m.data(), payload.data() + off, 4 * m.size());
            off += 4 * m.size();
            std::memcpy(v.data(), payload.data() + off, 4 * v.size());
            off += 4 * v.size();
        }
        optimizer->set_step_count(adam_doc.at("t").get<std::int64_t>());
    }

    return meta_from_header(doc);
}

}  // namespace odpg
