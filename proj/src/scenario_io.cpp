#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <json.hpp>

#include "dispatch/grid_model.hpp"

namespace dispatch::grid {

using nlohmann::json;

namespace {

// Small helpers that turn nlohmann type/key errors into ParseErrors carrying
// the dotted field path.
class Reader {
public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {}

    const json& require(const std::string& key) const {
        if (!node_.is_object()) fail(path_, "expected an object");
        auto it = node_.find(key);
        if (it == node_.end())
            throw ParseError(child(key), fmt::format("{}: missing required field '{}'",
                                                     path_.empty() ? "<root>" : path_, key));
        return *it;
    }

    const json* optional(const std::string& key) const {
        if (!node_.is_object()) fail(path_, "expected an object");
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    void reject_unknown(const std::set<std::string>& known) const {
        for (auto it = node_.begin(); it != node_.end(); ++it)
            if (!known.contains(it.key()))
                throw ParseError(child(it.key()), fmt::format("unknown field '{}'", child(it.key())));
    }

    std::string child(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
        throw ParseError(path, fmt::format("{}: {}", path.empty() ? "<root>" : path, msg));
    }

private:
    const json& node_;
    std::string path_;
};

double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) Reader::fail(path, "expected a number");
    return v.get<double>();
}

std::uint64_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) Reader::fail(path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) Reader::fail(path, "expected a string");
    return v.get<std::string>();
}

const json& as_array(const json& v, const std::string& path) {
    if (!v.is_array()) Reader::fail(path, "expected an array");
    return v;
}

Setup as_setup(const json& v, const std::string& path) {
    auto s = parse_setup(as_string(v, path));
    if (!s) Reader::fail(path, "expected centralized, distributed or decentralized");
    return *s;
}

GeneratorSpec parse_generator(const json& node, const std::string& path) {
    Reader r(node, path);
    r.reject_unknown({"a", "b", "c", "p_max"});
    GeneratorSpec g;
    g.a = as_number(r.require("a"), r.child("a"));
    g.b = as_number(r.require("b"), r.child("b"));
    if (const json* c = r.optional("c")) g.c = as_number(*c, r.child("c"));
    g.p_max = as_number(r.require("p_max"), r.child("p_max"));
    return g;
}

AgentSpec parse_agent(const json& node, const std::string& path, std::size_t index) {
    Reader r(node, path);
    r.reject_unknown({"id", "generators", "loads"});
    AgentSpec agent;
    agent.id = index;
    if (const json* id = r.optional("id")) agent.id = as_count(*id, r.child("id"));
    const json& gens = as_array(r.require("generators"), r.child("generators"));
    for (std::size_t g = 0; g < gens.size(); ++g)
        agent.generators.push_back(parse_generator(gens[g], fmt::format("{}.generators[{}]", path, g)));
    const json& loads = as_array(r.require("loads"), r.child("loads"));
    for (std::size_t d = 0; d < loads.size(); ++d)
        agent.nominal_loads.push_back(as_number(loads[d], fmt::format("{}.loads[{}]", path, d)));
    return agent;
}

template <class T, class F>
std::vector<T> parse_list(const json& v, const std::string& path, F&& item) {
    std::vector<T> out;
    for (std::size_t k = 0; k < as_array(v, path).size(); ++k)
        out.push_back(item(v[k], fmt::format("{}[{}]", path, k)));
    return out;
}

bench::BenchConfig parse_bench(const json& node) {
    Reader r(node, "bench");
    r.reject_unknown({"scenario", "setups", "n_agents", "n_gens", "n_loads", "target_params",
                      "hidden_list", "gen_list", "fixed_hidden", "fluctuation", "seed",
                      "repetitions", "rounds", "rho", "energy_model", "network_dir", "backend",
                      "device_power_w", "jobs"});
    bench::BenchConfig cfg;
    auto count = [](const json& v, const std::string& p) { return static_cast<std::size_t>(as_count(v, p)); };

    if (auto* v = r.optional("scenario")) cfg.scenario = as_string(*v, "bench.scenario");
    if (auto* v = r.optional("setups")) cfg.setups = parse_list<Setup>(*v, "bench.setups", as_setup);
    if (auto* v = r.optional("n_agents")) cfg.n_agents = count(*v, "bench.n_agents");
    if (auto* v = r.optional("n_gens")) cfg.n_gens = count(*v, "bench.n_gens");
    if (auto* v = r.optional("n_loads")) cfg.n_loads = count(*v, "bench.n_loads");
    if (auto* v = r.optional("target_params")) cfg.target_params = as_count(*v, "bench.target_params");
    if (auto* v = r.optional("hidden_list")) cfg.hidden_list = parse_list<std::size_t>(*v, "bench.hidden_list", count);
    if (auto* v = r.optional("gen_list")) cfg.gen_list = parse_list<std::size_t>(*v, "bench.gen_list", count);
    if (auto* v = r.optional("fixed_hidden")) {
        Reader fh(*v, "bench.fixed_hidden");
        for (auto it = v->begin(); it != v->end(); ++it) {
            auto s = parse_setup(it.key());
            if (!s) Reader::fail(fh.child(it.key()), "unknown setup");
            cfg.fixed_hidden[*s] = count(it.value(), fh.child(it.key()));
        }
    }
    if (auto* v = r.optional("fluctuation")) cfg.fluctuation = as_number(*v, "bench.fluctuation");
    if (auto* v = r.optional("seed")) cfg.seed = as_count(*v, "bench.seed");
    if (auto* v = r.optional("repetitions")) cfg.repetitions = count(*v, "bench.repetitions");
    if (auto* v = r.optional("rounds")) cfg.rounds = count(*v, "bench.rounds");
    if (auto* v = r.optional("rho")) cfg.rho = as_number(*v, "bench.rho");
    if (auto* v = r.optional("energy_model")) cfg.energy_model = as_string(*v, "bench.energy_model");
    if (auto* v = r.optional("network_dir")) cfg.network_dir = as_string(*v, "bench.network_dir");
    if (auto* v = r.optional("backend")) {
        const std::string b = as_string(*v, "bench.backend");
        if (b == "analytic") cfg.backend = bench::EnergyBackend::Analytic;
        else if (b == "wallclock") cfg.backend = bench::EnergyBackend::Wallclock;
        else Reader::fail("bench.backend", "expected analytic or wallclock");
    }
    if (auto* v = r.optional("device_power_w")) cfg.device_power_w = as_number(*v, "bench.device_power_w");
    if (auto* v = r.optional("jobs")) cfg.jobs = static_cast<unsigned>(as_count(*v, "bench.jobs"));
    return cfg;
}

json bench_to_json(const bench::BenchConfig& cfg) {
    json j;
    if (cfg.scenario) j["scenario"] = cfg.scenario->string();
    json setups = json::array();
    for (Setup s : cfg.setups) setups.push_back(std::string(to_string(s)));
    j["setups"] = setups;
    j["n_agents"] = cfg.n_agents;
    j["n_gens"] = cfg.n_gens;
    j["n_loads"] = cfg.n_loads;
    if (cfg.target_params) j["target_params"] = *cfg.target_params;
    j["hidden_list"] = cfg.hidden_list;
    j["gen_list"] = cfg.gen_list;
    json fh = json::object();
    for (auto [s, h] : cfg.fixed_hidden) fh[std::string(to_string(s))] = h;
    j["fixed_hidden"] = fh;
    j["fluctuation"] = cfg.fluctuation;
    j["seed"] = cfg.seed;
    j["repetitions"] = cfg.repetitions;
    j["rounds"] = cfg.rounds;
    j["rho"] = cfg.rho;
    if (cfg.energy_model) j["energy_model"] = cfg.energy_model->string();
    if (cfg.network_dir) j["network_dir"] = cfg.network_dir->string();
    j["backend"] = cfg.backend == bench::EnergyBackend::Analytic ? "analytic" : "wallclock";
    j["device_power_w"] = cfg.device_power_w;
    j["jobs"] = cfg.jobs;
    return j;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t k = 0; k < byte && k < text.size(); ++k)
        if (text[k] == '\n') ++line;
    return line;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError("", fmt::format("line {}: {}", line_of(json_text, e.byte), e.what()));
    }

    Reader r(root, "");
    r.reject_unknown({"agents", "bench"});
    Scenario scenario;
    if (const json* agents = r.optional("agents")) {
        as_array(*agents, "agents");
        for (std::size_t i = 0; i < agents->size(); ++i)
            scenario.spec.agents.push_back(parse_agent((*agents)[i], fmt::format("agents[{}]", i), i));
        validate(scenario.spec);
    }
    if (const json* b = r.optional("bench")) scenario.bench = parse_bench(*b);
    return scenario;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("grid_model", fmt::format("cannot open scenario file '{}'", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();

    Scenario scenario;
    try {
        scenario = parse_scenario(buffer.str());
    } catch (const ParseError& e) {
        throw ParseError(e.field(), fmt::format("{}: {}", path.string(), e.what()));
    }

    // Paths inside a config are relative to the config file.
    const auto base = path.parent_path();
    auto resolve = [&](std::optional<std::filesystem::path>& p) {
        if (p && p->is_relative()) p = base / *p;
    };
    resolve(scenario.bench.scenario);
    resolve(scenario.bench.energy_model);
    resolve(scenario.bench.network_dir);

    if (scenario.spec.agents.empty() && scenario.bench.scenario) {
        auto nested = load_scenario(*scenario.bench.scenario);
        scenario.spec = std::move(nested.spec);
    }
    scenario.bench.seed = seed_from_env(scenario.bench.seed);
    return scenario;
}

std::string scenario_to_json(const CommunitySpec& spec, const bench::BenchConfig& bench) {
    json root;
    json agents = json::array();
    for (const auto& a : spec.agents) {
        json gens = json::array();
        for (const auto& g : a.generators)
            gens.push_back({{"a", g.a}, {"b", g.b}, {"c", g.c}, {"p_max", g.p_max}});
        agents.push_back({{"id", a.id}, {"generators", gens}, {"loads", a.nominal_loads}});
    }
    root["agents"] = agents;
    root["bench"] = bench_to_json(bench);
    return root.dump(2) + "\n";
}

void write_scenario(const std::filesystem::path& path, const CommunitySpec& spec,
                    const bench::BenchConfig& bench) {
    std::ofstream out(path);
    if (!out) throw Error("grid_model", fmt::format("cannot write scenario file '{}'", path.string()));
    out << scenario_to_json(spec, bench);
}

}  // namespace dispatch::grid
