#include "odpg/config.hpp"

#include <fstream>
#include <sstream>

namespace odpg {

void RunConfig::validate() const {
    if (data_n < 1) throw ConfigError("config: data.n must be >= 1");
    if (model.widths.size() != 3) throw ConfigError("config: model.widths needs 3 entries");
    for (int w : model.widths) {
        if (w < model.gn_groups || w % model.gn_groups != 0) {
            throw ConfigError("config: widths must be divisible by gn_groups");
        }
        if (w % model.heads != 0) throw ConfigError("config: widths must be divisible by heads");
    }
    if (model.time_dim <= 0 || model.time_dim % 2 != 0) {
        throw ConfigError("config: model.time_dim must be positive and even");
    }
    if (timesteps < 2) throw ConfigError("config: schedule.timesteps must be >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("config: need 0 < beta_start <= beta_end < 1");
    }
    if (lr <= 0 || vae_lr <= 0) throw ConfigError("config: learning rates must be positive");
    if (batch_size < 1 || vae_batch < 1) throw ConfigError("config: batch sizes must be >= 1");
    if (steps < 0 || epochs < 0) throw ConfigError("config: steps/epochs must be >= 0");
    if (p_drop < 0.0 || p_drop > 1.0) throw ConfigError("config: p_drop must lie in [0,1]");
    if (lambda_rec < 0.0) throw ConfigError("config: lambda_rec must be >= 0");
    if (ddim_steps < 1 || ddim_steps > timesteps) {
        throw ConfigError("config: sample.steps must lie in [1, timesteps]");
    }
    if (eta < 0.0) throw ConfigError("config: sample.eta must be >= 0");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (w_solid < 0 || w_stripes < 0 || w_checker < 0 ||
        w_solid + w_stripes + w_checker <= 0) {
        throw ConfigError("config: pattern weights must be non-negative and sum > 0");
    }
    if (train_split != "train" && train_split != "val" && train_split != "test" &&
        train_split != "all") {
        throw ConfigError("config: train_split must be train/val/test/all");
    }
    if (model.max_timestep != timesteps) {
        throw ConfigError("config: model.max_timestep must equal schedule.timesteps");
    }
}

int RunConfig::effective_steps(int dataset_n) const {
    if (epochs > 0) {
        const std::int64_t per_epoch = std::max<std::int64_t>(1, dataset_n / batch_size);
        return static_cast<int>(epochs * per_epoch);
    }
    return steps;
}

RunConfig config_preset(const std::string& name) {
    RunConfig cfg;
    if (name == "desk" || name.empty()) return cfg;
    if (name == "paper") {
        // reference values; a desk machine is not expected to run these
        cfg.epochs = 30;
        cfg.batch_size = 24;
        cfg.p_drop = 0.2;
        cfg.lambda_rec = 1.0;
        cfg.ddim_steps = 50;
        return cfg;
    }
    throw ConfigError("config: unknown preset '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::int64_t d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::uint64_t d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": " + v);
    }
}

void apply_kv(RunConfig& cfg, const std::string& section, const std::string& key,
              const std::string& value) {
    const std::string full = section.empty() ? key : section + "." + key;
    if (section.empty()) {
        if (key == "seed") {
            cfg.seed = parse_u64(value, full);
        } else if (key == "threads") {
            cfg.threads = static_cast<int>(parse_int(value, full));
        } else if (key == "preset") {
            cfg = config_preset(value);
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
        return;
    }
    if (section == "data") {
        if (key == "dir") {
            cfg.data_dir = value;
        } else if (key == "n") {
            cfg.data_n = static_cast<int>(parse_int(value, full));
        } else if (key == "seed") {
            cfg.data_seed = parse_u64(value, full);
        } else if (key == "w_solid") {
            cfg.w_solid = parse_double(value, full);
        } else if (key == "w_stripes") {
            cfg.w_stripes = parse_double(value, full);
        } else if (key == "w_checker") {
            cfg.w_checker = parse_double(value, full);
        } else if (key == "heldout_garments") {
            cfg.heldout_garments = parse_bool(value, full);
        } else if (key == "train_split") {
            cfg.train_split = value;
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "model") {
        if (key == "widths") {
            std::istringstream is(value);
            std::vector<int> widths;
            std::string tok;
            while (std::getline(is, tok, ',')) {
                widths.push_back(static_cast<int>(parse_int(trim(tok), full)));
            }
            if (widths.size() != 3) throw ConfigError("config: model.widths needs 3 entries");
            cfg.model.widths = widths;
        } else if (key == "heads") {
            cfg.model.heads = static_cast<int>(parse_int(value, full));
        } else if (key == "time_dim") {
            cfg.model.time_dim = static_cast<int>(parse_int(value, full));
        } else if (key == "gn_groups") {
            cfg.model.gn_groups = static_cast<int>(parse_int(value, full));
        } else if (key == "phi_layers") {
            cfg.model.phi_layers = static_cast<int>(parse_int(value, full));
        } else if (key == "n_tokens") {
            cfg.model.n_tokens = static_cast<int>(parse_int(value, full));
        } else if (key == "token_dim") {
            cfg.model.token_dim = static_cast<int>(parse_int(value, full));
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "schedule") {
        if (key == "timesteps") {
            cfg.timesteps = static_cast<int>(parse_int(value, full));
            cfg.model.max_timestep = cfg.timesteps;
        } else if (key == "beta_start") {
            cfg.beta_start = parse_double(value, full);
        } else if (key == "beta_end") {
            cfg.beta_end = parse_double(value, full);
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "optimizer") {
        if (key == "lr") {
            cfg.lr = parse_double(value, full);
        } else if (key == "beta1") {
            cfg.adam_beta1 = parse_double(value, full);
        } else if (key == "beta2") {
            cfg.adam_beta2 = parse_double(value, full);
        } else if (key == "eps") {
            cfg.adam_eps = parse_double(value, full);
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "train") {
        if (key == "steps") {
            cfg.steps = static_cast<int>(parse_int(value, full));
        } else if (key == "epochs") {
            cfg.epochs = static_cast<int>(parse_int(value, full));
        } else if (key == "batch_size") {
            cfg.batch_size = static_cast<int>(parse_int(value, full));
        } else if (key == "p_drop") {
            cfg.p_drop = parse_double(value, full);
        } else if (key == "lambda_rec") {
            cfg.lambda_rec = parse_double(value, full);
        } else if (key == "log_every") {
            cfg.log_every = static_cast<int>(parse_int(value, full));
        } else if (key == "save_every") {
            cfg.save_every = static_cast<int>(parse_int(value, full));
        } else if (key == "val_every") {
            cfg.val_every = static_cast<int>(parse_int(value, full));
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "vae") {
        if (key == "steps") {
            cfg.vae_steps = static_cast<int>(parse_int(value, full));
        } else if (key == "batch_size") {
            cfg.vae_batch = static_cast<int>(parse_int(value, full));
        } else if (key == "lr") {
            cfg.vae_lr = parse_double(value, full);
        } else if (key == "beta_kl") {
            cfg.beta_kl = parse_double(value, full);
        } else if (key == "base") {
            cfg.vae_base = static_cast<int>(parse_int(value, full));
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "guidance") {
        if (key == "w_pose") {
            cfg.guidance.pose = parse_double(value, full);
        } else if (key == "w_app") {
            cfg.guidance.app = parse_double(value, full);
        } else if (key == "w_garment") {
            cfg.guidance.garment = parse_double(value, full);
        } else if (key == "joint_app_garment") {
            cfg.guidance.joint_app_garment = parse_bool(value, full);
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else if (section == "sample") {
        if (key == "steps") {
            cfg.ddim_steps = static_cast<int>(parse_int(value, full));
        } else if (key == "eta") {
            cfg.eta = parse_double(value, full);
        } else {
            throw ConfigError("config: unknown key '" + full + "'");
        }
    } else {
        throw ConfigError("config: unknown section '" + section + "'");
    }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config: bad section header at line " + std::to_string(lineno));
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: empty key at line " + std::to_string(lineno));
        }
        apply_kv(cfg, section, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "seed = " << cfg.seed << "\n";
    os << "threads = " << cfg.threads << "\n\n";
    os << "[data]\n";
    os << "dir = " << cfg.data_dir << "\n";
    os << "n = " << cfg.data_n << "\n";
    os << "seed = " << cfg.data_seed << "\n";
    os << "w_solid = " << cfg.w_solid << "\n";
    os << "w_stripes = " << cfg.w_stripes << "\n";
    os << "w_checker = " << cfg.w_checker << "\n";
    os << "heldout_garments = " << (cfg.heldout_garments ? "true" : "false") << "\n";
    os << "train_split = " << cfg.train_split << "\n\n";
    os << "[model]\n";
    os << "widths = " << cfg.model.widths[0] << "," << cfg.model.widths[1] << ","
       << cfg.model.widths[2] << "\n";
    os << "heads = " << cfg.model.heads << "\n";
    os << "time_dim = " << cfg.model.time_dim << "\n";
    os << "gn_groups = " << cfg.model.gn_groups << "\n";
    os << "phi_layers = " << cfg.model.phi_layers << "\n";
    os << "n_tokens = " << cfg.model.n_tokens << "\n";
    os << "token_dim = " << cfg.model.token_dim << "\n\n";
    os << "[schedule]\n";
    os << "timesteps = " << cfg.timesteps << "\n";
    os << "beta_start = " << cfg.beta_start << "\n";
    os << "beta_end = " << cfg.beta_end << "\n\n";
    os << "[optimizer]\n";
    os << "lr = " << cfg.lr << "\n";
    os << "beta1 = " << cfg.adam_beta1 << "\n";
    os << "beta2 = " << cfg.adam_beta2 << "\n";
    os << "eps = " << cfg.adam_eps << "\n\n";
    os << "[train]\n";
    os << "steps = " << cfg.steps << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "p_drop = " << cfg.p_drop << "\n";
    os << "lambda_rec = " << cfg.lambda_rec << "\n";
    os << "log_every = " << cfg.log_every << "\n";
    os << "save_every = " << cfg.save_every << "\n";
    os << "val_every = " << cfg.val_every << "\n\n";
    os << "[vae]\n";
    os << "steps = " << cfg.vae_steps << "\n";
    os << "batch_size = " << cfg.vae_batch << "\n";
    os << "lr = " << cfg.vae_lr << "\n";
    os << "beta_kl = " << cfg.beta_kl << "\n";
    os << "base = " << cfg.vae_base << "\n\n";
    os << "[guidance]\n";
    os << "w_pose = " << cfg.guidance.pose << "\n";
    os << "w_app = " << cfg.guidance.app << "\n";
    os << "w_garment = " << cfg.guidance.garment << "\n";
    os << "joint_app_garment = " << (cfg.guidance.joint_app_garment ? "true" : "false") << "\n\n";
    os << "[sample]\n";
    os << "steps = " << cfg.ddim_steps << "\n";
    os << "eta = " << cfg.eta << "\n";
    return os.str();
}

}  // namespace odpg
