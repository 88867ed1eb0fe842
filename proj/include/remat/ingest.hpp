#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "remat/errors.hpp"
#include "remat/partition.hpp"
#include "remat/types.hpp"

namespace remat {

// File format v1: one JSON document per file, explicit format_version, string
// node ids, sizes in bytes, times in integer microseconds. Encoding preserves
// insertion order so files are diffable and byte-stable.
using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline void require_fields(const Json& j, const std::vector<std::string>& required,
                           const std::vector<std::string>& optional,
                           const std::string& where) {
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    for (const auto& f : required)
        if (!j.contains(f)) throw ParseError(where + ": missing field '" + f + "'");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        bool known = std::find(required.begin(), required.end(), k) != required.end() ||
                     std::find(optional.begin(), optional.end(), k) != optional.end();
        if (!known) throw ParseError(where + ": unknown field '" + k + "'");
    }
}

inline Json read_document(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(path + ": top level must be an object");
    if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw ParseError(path + ": missing integer format_version");
    if (j["format_version"].get<int>() != kFormatVersion)
        throw ParseError(path + ": unsupported version " +
                         std::to_string(j["format_version"].get<int>()));
    if (!j.contains("kind") || !j["kind"].is_string())
        throw ParseError(path + ": missing kind");
    if (j["kind"].get<std::string>() != expected_kind)
        throw ParseError(path + ": expected kind '" + expected_kind + "', found '" +
                         j["kind"].get<std::string>() + "'");
    return j;
}

inline void write_document(const Json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write to " + path + " failed");
}

inline std::string cnode_kind_name(CNodeKind k) {
    switch (k) {
        case CNodeKind::Forward: return "forward";
        case CNodeKind::Backward: return "backward";
        case CNodeKind::Loss: return "loss";
    }
    return "forward";
}

inline CNodeKind cnode_kind_from(const std::string& s, const std::string& where) {
    if (s == "forward") return CNodeKind::Forward;
    if (s == "backward") return CNodeKind::Backward;
    if (s == "loss") return CNodeKind::Loss;
    throw ParseError(where + ": unknown cnode kind '" + s + "'");
}

inline std::string dnode_kind_name(DNodeKind k) {
    switch (k) {
        case DNodeKind::Data: return "data";
        case DNodeKind::Grad: return "grad";
        case DNodeKind::Phantom: return "phantom";
    }
    return "data";
}

inline DNodeKind dnode_kind_from(const std::string& s, const std::string& where) {
    if (s == "data") return DNodeKind::Data;
    if (s == "grad") return DNodeKind::Grad;
    if (s == "phantom") return DNodeKind::Phantom;
    throw ParseError(where + ": unknown dnode kind '" + s + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CD graphs and chains
// ---------------------------------------------------------------------------

inline Json encode_block(const CDGraph& g) {
    Json b;
    Json cn = Json::array();
    for (const CNode& c : g.cnodes) {
        Json jc;
        jc["id"] = c.id;
        jc["kind"] = detail::cnode_kind_name(c.kind);
        jc["time_us"] = c.time;
        jc["tmp_mem"] = c.tmp_mem;
        Json deps = Json::array();
        for (int d : c.deps) deps.push_back(g.dnodes[d].id);
        jc["deps"] = deps;
        Json outs = Json::array();
        for (int d : c.outputs) outs.push_back(g.dnodes[d].id);
        jc["outputs"] = outs;
        cn.push_back(jc);
    }
    b["cnodes"] = cn;
    Json dn = Json::array();
    for (const DNode& d : g.dnodes) {
        Json jd;
        jd["id"] = d.id;
        jd["size"] = d.size;
        jd["kind"] = detail::dnode_kind_name(d.kind);
        Json ps = Json::array();
        for (int p : d.parents) ps.push_back(g.cnodes[p].id);
        jd["parents"] = ps;
        dn.push_back(jd);
    }
    b["dnodes"] = dn;
    b["input_data"] = g.dnodes[g.input_data].id;
    b["output_data"] = g.dnodes[g.output_data].id;
    b["loss_id"] = g.cnodes[g.loss_index].id;
    return b;
}

inline CDGraph decode_block(const Json& jb, const std::string& where) {
    detail::require_fields(jb, {"cnodes", "dnodes", "input_data", "output_data", "loss_id"}, {},
                           where);
    CDGraph g;
    std::unordered_map<std::string, int> did, cid;
    for (const Json& jd : jb["dnodes"]) {
        detail::require_fields(jd, {"id", "size", "kind", "parents"}, {}, where + ".dnodes");
        DNode d;
        d.id = jd["id"].get<std::string>();
        d.size = jd["size"].get<Bytes>();
        d.kind = detail::dnode_kind_from(jd["kind"].get<std::string>(), where);
        if (!did.emplace(d.id, static_cast<int>(g.dnodes.size())).second)
            throw ValidationError(where + ": duplicate dnode id " + d.id);
        g.dnodes.push_back(std::move(d));
    }
    for (const Json& jc : jb["cnodes"]) {
        detail::require_fields(jc, {"id", "kind", "time_us", "tmp_mem", "deps", "outputs"}, {},
                               where + ".cnodes");
        CNode c;
        c.id = jc["id"].get<std::string>();
        c.kind = detail::cnode_kind_from(jc["kind"].get<std::string>(), where);
        c.time = jc["time_us"].get<Micros>();
        c.tmp_mem = jc["tmp_mem"].get<Bytes>();
        if (!cid.emplace(c.id, static_cast<int>(g.cnodes.size())).second)
            throw ValidationError(where + ": duplicate cnode id " + c.id);
        for (const Json& jd : jc["deps"]) {
            auto it = did.find(jd.get<std::string>());
            if (it == did.end())
                throw ValidationError(where + ": cnode " + c.id + " dep '" +
                                      jd.get<std::string>() + "' does not exist");
            c.deps.push_back(it->second);
        }
        for (const Json& jd : jc["outputs"]) {
            auto it = did.find(jd.get<std::string>());
            if (it == did.end())
                throw ValidationError(where + ": cnode " + c.id + " output '" +
                                      jd.get<std::string>() + "' does not exist");
            c.outputs.push_back(it->second);
        }
        g.cnodes.push_back(std::move(c));
    }
    // rebuild parents from outputs to keep the two edge views mirrored
    for (int c = 0; c < static_cast<int>(g.cnodes.size()); ++c)
        for (int d : g.cnodes[c].outputs) g.dnodes[d].parents.push_back(c);

    auto dlook = [&](const char* field) {
        std::string id = jb[field].get<std::string>();
        auto it = did.find(id);
        if (it == did.end())
            throw ValidationError(where + ": " + field + " '" + id + "' does not exist");
        return it->second;
    };
    g.input_data = dlook("input_data");
    g.output_data = dlook("output_data");
    std::string lid = jb["loss_id"].get<std::string>();
    auto lit = cid.find(lid);
    if (lit == cid.end())
        throw ValidationError(where + ": loss_id '" + lid + "' does not exist");
    g.loss_index = lit->second;
    return g;
}

inline Json encode_chain(const Chain& chain) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "chain";
    Json blocks = Json::array();
    for (const CDGraph& g : chain.blocks) blocks.push_back(encode_block(g));
    j["blocks"] = blocks;
    j["equiv_classes"] = chain.equiv_class;
    return j;
}

inline Chain decode_chain(const Json& j, const std::string& where) {
    detail::require_fields(j, {"format_version", "kind", "blocks"}, {"equiv_classes"}, where);
    Chain chain;
    int bi = 0;
    for (const Json& jb : j["blocks"]) {
        chain.blocks.push_back(decode_block(jb, where + ".blocks[" + std::to_string(bi) + "]"));
        ++bi;
    }
    if (j.contains("equiv_classes")) {
        for (const Json& e : j["equiv_classes"]) chain.equiv_class.push_back(e.get<int>());
    } else {
        chain.equiv_class.assign(chain.blocks.size(), 0);
        for (int i = 0; i < chain.length(); ++i) chain.equiv_class[i] = i;
    }
    return chain;
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

struct PartitionedForwardGraph {
    ForwardGraph graph;
    std::vector<std::string> separators;            // optional
    std::vector<std::vector<std::string>> blocks;   // optional, node-id lists
    std::vector<int> equiv_classes;                 // optional, per block
};

inline Json encode_forward_graph(const PartitionedForwardGraph& p) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "forward_graph";
    Json nodes = Json::array();
    for (const ForwardNode& n : p.graph.nodes) {
        Json jn;
        jn["id"] = n.id;
        jn["op_signature"] = n.op_signature;
        jn["output_shape"] = n.output_shape;
        jn["param_signature"] = n.param_signature;
        jn["predecessors"] = n.predecessors;
        nodes.push_back(jn);
    }
    j["nodes"] = nodes;
    j["input_ids"] = p.graph.input_ids;
    j["output_id"] = p.graph.output_id;
    if (!p.separators.empty()) j["separators"] = p.separators;
    if (!p.blocks.empty()) j["blocks"] = p.blocks;
    if (!p.equiv_classes.empty()) j["equiv_classes"] = p.equiv_classes;
    return j;
}

inline void validate_forward_graph(const ForwardGraph& g) {
    std::unordered_map<std::string, int> pos;
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i)
        if (!pos.emplace(g.nodes[i].id, i).second)
            throw ValidationError("duplicate node id " + g.nodes[i].id);
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i)
        for (const std::string& p : g.nodes[i].predecessors) {
            auto it = pos.find(p);
            if (it == pos.end())
                throw ValidationError("node " + g.nodes[i].id + " references missing node " + p);
            if (it->second >= i)
                throw ValidationError("node order lists " + g.nodes[i].id +
                                      " before its predecessor " + p);
        }
    for (const std::string& in : g.input_ids)
        if (!pos.count(in)) throw ValidationError("input_ids references missing node " + in);
    if (!pos.count(g.output_id))
        throw ValidationError("output_id references missing node " + g.output_id);
    // the output node must have no successors
    for (const ForwardNode& n : g.nodes)
        for (const std::string& p : n.predecessors)
            if (p == g.output_id)
                throw ValidationError("output node " + g.output_id + " has successor " + n.id);
}

inline PartitionedForwardGraph decode_forward_graph(const Json& j, const std::string& where) {
    detail::require_fields(j, {"format_version", "kind", "nodes", "input_ids", "output_id"},
                           {"separators", "blocks", "equiv_classes"}, where);
    PartitionedForwardGraph p;
    for (const Json& jn : j["nodes"]) {
        detail::require_fields(
            jn, {"id", "op_signature", "output_shape", "param_signature", "predecessors"}, {},
            where + ".nodes");
        ForwardNode n;
        n.id = jn["id"].get<std::string>();
        n.op_signature = jn["op_signature"].get<std::string>();
        for (const Json& s : jn["output_shape"]) {
            auto v = s.get<std::int64_t>();
            if (v < 0) throw ValidationError(where + ": negative shape entry in " + n.id);
            n.output_shape.push_back(v);
        }
        n.param_signature = jn["param_signature"].get<std::string>();
        for (const Json& s : jn["predecessors"]) n.predecessors.push_back(s.get<std::string>());
        p.graph.nodes.push_back(std::move(n));
    }
    for (const Json& s : j["input_ids"]) p.graph.input_ids.push_back(s.get<std::string>());
    p.graph.output_id = j["output_id"].get<std::string>();
    if (j.contains("separators"))
        for (const Json& s : j["separators"]) p.separators.push_back(s.get<std::string>());
    if (j.contains("blocks"))
        for (const Json& b : j["blocks"]) {
            std::vector<std::string> ids;
            for (const Json& s : b) ids.push_back(s.get<std::string>());
            p.blocks.push_back(std::move(ids));
        }
    if (j.contains("equiv_classes"))
        for (const Json& e : j["equiv_classes"]) p.equiv_classes.push_back(e.get<int>());
    validate_forward_graph(p.graph);
    return p;
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

inline Json encode_schedule(const Schedule& s) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "schedule";
    Json ops = Json::array();
    for (const ScheduleOp& op : s.ops) {
        Json jo;
        switch (op.kind) {
            case ScheduleOp::Compute:
                jo["op"] = "compute";
                jo["block"] = op.block;
                jo["target"] = op.target;
                break;
            case ScheduleOp::Forget:
                jo["op"] = "forget";
                jo["block"] = op.block;
                jo["target"] = op.target;
                break;
            case ScheduleOp::BlockFwd:
                jo["op"] = "block_fwd";
                jo["block"] = op.block;
                jo["target"] = op.option;
                break;
            case ScheduleOp::BlockBwd:
                jo["op"] = "block_bwd";
                jo["block"] = op.block;
                jo["target"] = op.option;
                break;
        }
        ops.push_back(jo);
    }
    j["ops"] = ops;
    if (s.meta) {
        Json m;
        m["budget_bytes"] = s.meta->budget;
        m["makespan_us"] = s.meta->makespan;
        m["peak_bytes"] = s.meta->peak;
        j["metadata"] = m;
    }
    return j;
}

inline Schedule decode_schedule(const Json& j, const std::string& where) {
    detail::require_fields(j, {"format_version", "kind", "ops"}, {"metadata"}, where);
    Schedule s;
    for (const Json& jo : j["ops"]) {
        detail::require_fields(jo, {"op", "block", "target"}, {}, where + ".ops");
        std::string kind = jo["op"].get<std::string>();
        ScheduleOp op;
        op.block = jo["block"].get<int>();
        if (kind == "compute" || kind == "forget") {
            op.kind = kind == "compute" ? ScheduleOp::Compute : ScheduleOp::Forget;
            op.target = jo["target"].get<std::string>();
        } else if (kind == "block_fwd" || kind == "block_bwd") {
            op.kind = kind == "block_fwd" ? ScheduleOp::BlockFwd : ScheduleOp::BlockBwd;
            op.option = jo["target"].get<int>();
        } else {
            throw ParseError(where + ": unknown op '" + kind + "'");
        }
        s.ops.push_back(std::move(op));
    }
    if (j.contains("metadata")) {
        detail::require_fields(j["metadata"], {"budget_bytes", "makespan_us", "peak_bytes"}, {},
                               where + ".metadata");
        ScheduleMeta m;
        m.budget = j["metadata"]["budget_bytes"].get<Bytes>();
        m.makespan = j["metadata"]["makespan_us"].get<Micros>();
        m.peak = j["metadata"]["peak_bytes"].get<Bytes>();
        s.meta = m;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Block option menus (kind "options")
// ---------------------------------------------------------------------------

inline Json encode_options(const CDGraph& g, const std::vector<BlockOption>& opts) {
    Json arr = Json::array();
    for (const BlockOption& o : opts) {
        Json jo;
        jo["option_id"] = o.option_id;
        jo["time_fwd_us"] = o.time_fwd;
        if (o.time_bwd) jo["time_bwd_us"] = *o.time_bwd;
        jo["save_mem"] = o.save_mem;
        jo["peak_fwd"] = o.peak_fwd;
        jo["peak_fwd_pre"] = o.peak_fwd_pre;
        jo["peak_bwd"] = o.peak_bwd;
        auto emit = [&](const std::vector<BlockLocalOp>& ops) {
            Json ja = Json::array();
            for (const BlockLocalOp& lo : ops) {
                Json jl;
                jl["op"] = lo.kind == BlockLocalOp::Compute ? "compute" : "forget";
                jl["target"] = lo.kind == BlockLocalOp::Compute ? g.cnodes[lo.node].id
                                                                : g.dnodes[lo.node].id;
                ja.push_back(jl);
            }
            return ja;
        };
        jo["fwd_ops"] = emit(o.fwd_ops);
        jo["bwd_ops"] = emit(o.bwd_ops);
        arr.push_back(jo);
    }
    return arr;
}

inline std::vector<BlockOption> decode_options(const CDGraph& g, const Json& arr,
                                               const std::string& where) {
    std::vector<BlockOption> out;
    for (const Json& jo : arr) {
        detail::require_fields(jo,
                               {"option_id", "time_fwd_us", "save_mem", "peak_fwd",
                                "peak_fwd_pre", "peak_bwd", "fwd_ops", "bwd_ops"},
                               {"time_bwd_us"}, where);
        BlockOption o;
        o.option_id = jo["option_id"].get<int>();
        o.time_fwd = jo["time_fwd_us"].get<Micros>();
        if (jo.contains("time_bwd_us")) o.time_bwd = jo["time_bwd_us"].get<Micros>();
        o.save_mem = jo["save_mem"].get<Bytes>();
        o.peak_fwd = jo["peak_fwd"].get<Bytes>();
        o.peak_fwd_pre = jo["peak_fwd_pre"].get<Bytes>();
        o.peak_bwd = jo["peak_bwd"].get<Bytes>();
        auto read = [&](const Json& ja) {
            std::vector<BlockLocalOp> ops;
            for (const Json& jl : ja) {
                detail::require_fields(jl, {"op", "target"}, {}, where + ".ops");
                BlockLocalOp lo;
                std::string k = jl["op"].get<std::string>();
                std::string target = jl["target"].get<std::string>();
                if (k == "compute") {
                    lo.kind = BlockLocalOp::Compute;
                    lo.node = g.cnode_index(target);
                } else if (k == "forget") {
                    lo.kind = BlockLocalOp::Forget;
                    lo.node = g.dnode_index(target);
                } else {
                    throw ParseError(where + ": unknown local op '" + k + "'");
                }
                if (lo.node < 0)
                    throw ValidationError(where + ": option references missing node " + target);
                ops.push_back(lo);
            }
            return ops;
        };
        o.fwd_ops = read(jo["fwd_ops"]);
        o.bwd_ops = read(jo["bwd_ops"]);
        out.push_back(std::move(o));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File-level entry points
// ---------------------------------------------------------------------------

inline PartitionedForwardGraph load_forward_graph(const std::string& path) {
    return decode_forward_graph(detail::read_document(path, "forward_graph"), path);
}

inline void save_forward_graph(const PartitionedForwardGraph& p, const std::string& path) {
    detail::write_document(encode_forward_graph(p), path);
}

inline Chain load_chain(const std::string& path) {
    Chain chain = decode_chain(detail::read_document(path, "chain"), path);
    auto violations = validate_chain(chain);
    if (!violations.empty())
        throw ValidationError(path + ": " + violations.front().rule + ": " +
                              violations.front().detail);
    verify_equiv_classes(chain);
    return chain;
}

inline void save_chain(const Chain& chain, const std::string& path) {
    detail::write_document(encode_chain(chain), path);
}

inline Schedule load_schedule(const std::string& path) {
    return decode_schedule(detail::read_document(path, "schedule"), path);
}

inline void save_schedule(const Schedule& s, const std::string& path) {
    detail::write_document(encode_schedule(s), path);
}

}  // namespace remat
