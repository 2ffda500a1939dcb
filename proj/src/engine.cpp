#include "dyncfg/engine.hpp"

#include <algorithm>
#include <chrono>

#include "dyncfg/tracker.hpp"

namespace dyncfg {

const char* to_string(BreakpointKind k) {
    switch (k) {
        case BreakpointKind::Call: return "call";
        case BreakpointKind::Exit: return "exit";
        case BreakpointKind::Return: return "return";
        case BreakpointKind::ExecWrite: return "exec_write";
    }
    return "?";
}

ExplorationManager::ExplorationManager(ExplorationLimits limits, Solver* solver) : limits_(limits), solver_(solver) {}

SimState ExplorationManager::make_entry_state(std::shared_ptr<const BinaryImage> main, const std::string& path,
                                              std::shared_ptr<const SessionConfig> cfg) {
    SimState s(next_id(), std::move(cfg), solver_);
    s.set_listener(this);
    const std::uint64_t entry = main->entry;
    LoadedImage li = load_image(s, std::move(main), path, path, "main");
    s.pc = li.base + entry;
    s.push(bv(kExitSentinel, 64));
    return s;
}

void ExplorationManager::add_state(SimState s) {
    s.set_solver(solver_);
    s.set_listener(this);
    active.push_back(std::move(s));
}

void ExplorationManager::fire(SimState& s, const TransferInfo& info) {
    for (const auto& b : breakpoints_)
        if (b.kind == info.kind) b.handler(s, info);
}

void ExplorationManager::on_exec_write(SimState& s, std::uint64_t site, std::uint64_t addr,
                                       const std::vector<std::uint8_t>& old_bytes,
                                       const std::vector<std::uint8_t>& new_bytes) {
    TransferInfo info;
    info.kind = BreakpointKind::ExecWrite;
    info.site = site;
    info.write_addr = addr;
    info.old_bytes = old_bytes;
    info.new_bytes = new_bytes;
    fire(s, info);
}

void ExplorationManager::finish(SimState& s, const std::string& why) {
    s.status = StateStatus::Finished;
    s.status_reason = why;
}

void ExplorationManager::fail(SimState& s, const std::string& why) {
    s.status = StateStatus::Errored;
    s.status_reason = why;
    s.log(EventKind::Warning, {{"what", "state-error"}, {"reason", why}, {"pc", s.pc}});
}

std::vector<std::uint64_t> ExplorationManager::targets_of(SimState& s, const Expr& t) {
    if (t.is_const()) return {t.value()};
    return resolve_symbolic_target(s, t);
}

namespace {

Expr sext_imm(std::int32_t imm) { return bv(static_cast<std::uint64_t>(static_cast<std::int64_t>(imm)), 64); }

}  // namespace

std::vector<SimState> ExplorationManager::step(SimState s) {
    std::vector<SimState> out;
    ++s.steps;
    const std::uint64_t pc = s.pc;
    try {
        if (in_hook_window(pc)) {
            const std::uint64_t k = (pc - kHookWindow) / kHookImageStride;
            const std::uint64_t i = ((pc - kHookWindow) % kHookImageStride) / kHookSlot;
            if (k == kSigreturnImage) {
                finish(s, pc == kExitSentinel ? "return-from-entry" : "signal-return");
                out.push_back(std::move(s));
                return out;
            }
            if (k >= s.images.size() || i >= s.images[k].image->imports.size() || (pc - kHookWindow) % kHookSlot) {
                fail(s, "UnmappedPc");
                out.push_back(std::move(s));
                return out;
            }
            const std::string name = s.images[k].image->import_name(i);
            auto ret = s.concrete_u64(s.sp());
            s.current_site = ret ? *ret - kInsnSize : 0;
            if (hooks_) hooks_->call(s, name);
            else s.set_reg(0, s.fresh_var("ret_" + name, 64, "hook"));
            if (s.status == StateStatus::Active) {
                Expr r = s.pop();
                s.pc = r.is_const() ? r.value() : s.concretize(r, "hook return");
                if (!s.shadow_stack.empty() && s.shadow_stack.back() == s.pc) s.shadow_stack.pop_back();
            }
            out.push_back(std::move(s));
            return out;
        }

        // Loop guard.
        auto& [count, ncons] = s.visits[pc];
        if (count == 0 || ncons != s.constraints().size()) {
            count = 1;
            ncons = s.constraints().size();
        } else if (++count > limits_.loop_limit) {
            finish(s, "loop-guard");
            s.log(EventKind::Warning, {{"what", "loop-guard"}, {"pc", pc}});
            out.push_back(std::move(s));
            return out;
        }

        if (!(s.perms_at(pc) & kSegExec) || !(s.perms_at(pc + kInsnSize - 1) & kSegExec)) {
            fail(s, "UnmappedPc");
            out.push_back(std::move(s));
            return out;
        }
        std::array<std::uint8_t, kInsnSize> raw{};
        for (std::size_t j = 0; j < kInsnSize; ++j) {
            auto b = s.concrete_byte(pc + j);
            if (!b) {
                fail(s, "IllegalOpcode");
                out.push_back(std::move(s));
                return out;
            }
            raw[j] = *b;
        }
        auto decoded = decode(raw);
        if (!decoded) {
            fail(s, "IllegalOpcode");
            out.push_back(std::move(s));
            return out;
        }
        const Instruction in = *decoded;
        s.current_site = pc;
        const std::uint64_t next = pc + kInsnSize;
        auto R = [&](unsigned r) -> const Expr& { return s.reg(r); };

        switch (in.op) {
            case Opcode::Halt: finish(s, "halt"); break;
            case Opcode::Movi: s.set_reg(in.rd, sext_imm(in.imm)), s.pc = next; break;
            case Opcode::Mov: s.set_reg(in.rd, R(in.rs1)), s.pc = next; break;
            case Opcode::Add:
            case Opcode::Sub:
            case Opcode::Xor:
            case Opcode::And:
            case Opcode::Or:
            case Opcode::Shl:
            case Opcode::Shr:
            case Opcode::Mul: {
                static constexpr Op kAlu[] = {Op::Add, Op::Sub, Op::Xor, Op::And, Op::Or, Op::Shl, Op::Shr, Op::Mul};
                Op op = kAlu[static_cast<int>(in.op) - static_cast<int>(Opcode::Add)];
                s.set_reg(in.rd, apply(op, R(in.rs1), R(in.rs2)));
                s.pc = next;
                break;
            }
            case Opcode::Ld8:
            case Opcode::Ld16:
            case Opcode::Ld32:
            case Opcode::Ld64: {
                Expr addr = add(R(in.rs1), sext_imm(in.imm));
                s.set_reg(in.rd, zext(s.read_mem(addr, mem_width(in.op)), 64));
                s.pc = next;
                break;
            }
            case Opcode::St8:
            case Opcode::St16:
            case Opcode::St32:
            case Opcode::St64: {
                Expr addr = add(R(in.rs1), sext_imm(in.imm));
                s.write_mem(addr, low_bits(R(in.rs2), 8 * mem_width(in.op)), pc);
                s.pc = next;
                break;
            }
            case Opcode::Push: s.push(R(in.rs1)), s.pc = next; break;
            case Opcode::Pop: {
                Expr v = s.pop();
                s.set_reg(in.rd, v);
                s.pc = next;
                break;
            }
            case Opcode::Jmp: {
                TransferInfo info;
                info.kind = BreakpointKind::Exit;
                info.site = pc;
                info.insn = in;
                info.target = bv(rel_target(pc, in.imm), 64);
                info.resolved = {rel_target(pc, in.imm)};
                fire(s, info);
                s.pc = rel_target(pc, in.imm);
                break;
            }
            case Opcode::Beq:
            case Opcode::Bne:
            case Opcode::Bltu:
            case Opcode::Blts: {
                Expr cond;
                switch (in.op) {
                    case Opcode::Beq: cond = eq(R(in.rs1), R(in.rs2)); break;
                    case Opcode::Bne: cond = ne(R(in.rs1), R(in.rs2)); break;
                    case Opcode::Bltu: cond = ult(R(in.rs1), R(in.rs2)); break;
                    default: cond = slt(R(in.rs1), R(in.rs2)); break;
                }
                const std::uint64_t taken = rel_target(pc, in.imm);
                TransferInfo info;
                info.kind = BreakpointKind::Exit;
                info.site = pc;
                info.insn = in;
                info.target = bv(taken, 64);
                info.conditional = true;
                if (cond.is_const()) {
                    info.resolved = {cond.value() ? taken : next};
                    fire(s, info);
                    s.pc = cond.value() ? taken : next;
                    break;
                }
                Expr conds[2] = {cond, bnot(cond)};
                SatResult r[2];
                for (int j = 0; j < 2; ++j) {
                    Expr one[] = {conds[j]};
                    r[j] = s.check(one);
                }
                if (r[0].sat()) info.resolved.push_back(taken);
                if (r[1].sat() && next != taken) info.resolved.push_back(next);
                fire(s, info);
                if (!r[0].sat() && !r[1].sat()) {
                    fail(s, "no feasible successor");
                    break;
                }
                if (r[0].sat() && r[1].sat()) {
                    SimState other = s.fork_with_model(conds[1], next_id(), r[1].model);
                    other.pc = next;
                    SimState self = s.fork_with_model(conds[0], s.id, r[0].model);
                    self.pc = taken;
                    out.push_back(std::move(self));
                    out.push_back(std::move(other));
                    return out;
                }
                const int j = r[0].sat() ? 0 : 1;
                s = s.fork_with_model(conds[j], s.id, r[j].model);
                s.pc = j == 0 ? taken : next;
                break;
            }
            case Opcode::Jmpr:
            case Opcode::Callr:
            case Opcode::Ret:
            case Opcode::Call:
            case Opcode::Callimp: {
                const bool is_ret = in.op == Opcode::Ret;
                const bool call = is_call(in.op);
                TransferInfo info;
                info.kind = is_ret ? BreakpointKind::Return : call ? BreakpointKind::Call : BreakpointKind::Exit;
                info.site = pc;
                info.insn = in;
                info.continuation = call ? next : 0;
                if (in.op == Opcode::Call) {
                    info.target = bv(rel_target(pc, in.imm), 64);
                } else if (in.op == Opcode::Callimp) {
                    const LoadedImage* img = s.image_containing(pc);
                    if (!img || in.imm < 0 || static_cast<std::size_t>(in.imm) >= img->image->imports.size()) {
                        fail(s, "bad import ordinal");
                        break;
                    }
                    info.target = bv(img->stub(static_cast<std::size_t>(in.imm)), 64);
                } else if (is_ret) {
                    info.target = s.read_mem(s.sp(), 8);
                    info.continuation = s.shadow_stack.empty() ? 0 : s.shadow_stack.back();
                } else {
                    info.target = R(in.rs1);
                }
                info.indirect = in.op == Opcode::Jmpr || in.op == Opcode::Callr || is_ret;
                info.resolved = targets_of(s, info.target);
                fire(s, info);
                if (info.resolved.empty()) {
                    s.log(EventKind::Warning, {{"what", "no-feasible-target"}, {"site", pc}});
                    fail(s, "no feasible target");
                    break;
                }
                if (is_ret) s.pop();
                if (call) s.push(bv(next, 64));
                std::vector<SimState> succ;
                const bool symbolic = !info.target.is_const();
                for (std::size_t j = 0; j < info.resolved.size(); ++j) {
                    const std::uint64_t a = info.resolved[j];
                    Expr c = eq(info.target, bv(a, 64));
                    SimState t = j + 1 == info.resolved.size() ? std::move(s) : s;
                    if (j + 1 != info.resolved.size() || symbolic) {
                        if (j + 1 != info.resolved.size()) t.id = next_id();
                        if (symbolic) t.add_constraint(c);
                    }
                    if (call) t.shadow_stack.push_back(next);
                    if (is_ret && !t.shadow_stack.empty() && t.shadow_stack.back() == a) t.shadow_stack.pop_back();
                    t.pc = a;
                    succ.push_back(std::move(t));
                }
                // The last successor keeps the original id; order successors by target.
                for (auto& t : succ) out.push_back(std::move(t));
                return out;
            }
            case Opcode::Syscall: {
                switch (in.imm) {
                    case kSysRead: {
                        const int fd = static_cast<int>(s.concretize(R(0), "read fd"));
                        const std::uint64_t buf = s.concretize(R(1), "read buf");
                        const std::uint64_t len = s.concretize(R(2), "read len");
                        std::uint64_t n = 0;
                        if (FdObject* f = s.fd(fd); f && f->kind != FdKind::Socket) {
                            const auto& data = *f->backing;
                            while (n < len && f->cursor < data.size()) s.write_mem(buf + n++, data[f->cursor++], pc);
                        }
                        s.set_reg(0, bv(n, 64));
                        break;
                    }
                    case kSysWrite: {
                        const int fd = static_cast<int>(s.concretize(R(0), "write fd"));
                        const std::uint64_t buf = s.concretize(R(1), "write buf");
                        const std::uint64_t len = std::min<std::uint64_t>(s.concretize(R(2), "write len"), 1 << 20);
                        if (fd == 1 || fd == 2) {
                            std::uint64_t v = 0;
                            std::string hexs;
                            for (std::uint64_t j = 0; j < len; ++j) {
                                auto b = static_cast<std::uint8_t>(s.eval(s.read_byte(buf + j)));
                                if (j < 8) v |= std::uint64_t{b} << (8 * j);
                                static const char* digits = "0123456789abcdef";
                                hexs += digits[b >> 4];
                                hexs += digits[b & 15];
                            }
                            s.outputs.push_back(v);
                            const LoadedImage* img = s.image_containing(pc);
                            s.log(EventKind::Hook, {{"fn", "write"},
                                                    {"fd", fd},
                                                    {"bytes", hexs},
                                                    {"site", pc},
                                                    {"image", img ? img->name : ""}});
                        } else if (FdObject* f = s.fd(fd); f && f->kind != FdKind::Socket) {
                            auto& data = s.fd_backing(fd);
                            for (std::uint64_t j = 0; j < len; ++j) data.push_back(s.read_byte(buf + j));
                        } else {
                            s.set_reg(0, bv(~std::uint64_t{0}, 64));
                            s.pc = next;
                            break;
                        }
                        s.set_reg(0, bv(len, 64));
                        break;
                    }
                    case kSysTime:
                        if (s.config().concrete) s.set_reg(0, bv(s.config().witness_time.value_or(0), 64));
                        else s.set_reg(0, s.fresh_var("time", 64, "time"));
                        break;
                    case kSysExit: finish(s, "exit"); break;
                    default: fail(s, "bad syscall");
                }
                if (s.status == StateStatus::Active) s.pc = next;
                break;
            }
        }
    } catch (const std::exception& e) {
        fail(s, e.what());
    }
    out.push_back(std::move(s));
    return out;
}

void ExplorationManager::schedule_signal_paths(SimState& s, std::vector<SimState>& out) {
    for (std::uint64_t h : s.pending_signals) {
        if (s.delivered_signals.count(h)) continue;
        s.delivered_signals.insert(h);
        SimState child = s;
        child.id = next_id();
        child.parent_id = s.id;
        child.pc = h;
        child.push(bv(kExitSentinel, 64));
        child.set_reg(0, bv(10, 64));
        child.log(EventKind::Signal, {{"handler", h}, {"from_state", s.id}});
        out.push_back(std::move(child));
    }
}

void ExplorationManager::enforce_bounds() {
    if (active.size() > limits_.max_active) {
        std::stable_sort(active.begin(), active.end(),
                         [](const SimState& a, const SimState& b) { return a.steps < b.steps; });
        for (std::size_t j = limits_.max_active; j < active.size(); ++j) {
            if (deferred.size() >= limits_.deferred_capacity) {
                ++discarded_;
                warnings.push_back("discarded state " + std::to_string(active[j].id) + ": deferred stash full");
                continue;
            }
            deferred.push_back(std::move(active[j]));
        }
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(limits_.max_active), active.end());
    }
    while (active.size() < limits_.max_active && !deferred.empty()) {
        active.push_back(std::move(deferred.front()));
        deferred.pop_front();
    }
}

void ExplorationManager::iterate() {
    ++iterations_;
    std::vector<SimState> next;
    for (auto& s : active) {
        for (auto& t : step(std::move(s))) {
            if (t.status == StateStatus::Active) {
                std::vector<SimState> extra;
                if (t.pending_signals.size() > t.delivered_signals.size()) schedule_signal_paths(t, extra);
                next.push_back(std::move(t));
                for (auto& e : extra) next.push_back(std::move(e));
            } else if (t.status == StateStatus::Finished) {
                finished.push_back(std::move(t));
            } else {
                errored.push_back(std::move(t));
            }
        }
    }
    active = std::move(next);
    enforce_bounds();
    max_active_seen_ = std::max(max_active_seen_, active.size());
}

ExplorationResult ExplorationManager::run() {
    auto t0 = std::chrono::steady_clock::now();
    const std::size_t unknown0 = solver_->unknown_count();
    enforce_bounds();
    while ((!active.empty() || !deferred.empty()) && iterations_ < limits_.budget) iterate();
    ExplorationResult r;
    r.steps = iterations_;
    r.budget_exhausted = !active.empty() || !deferred.empty();
    r.discarded = discarded_;
    r.max_active_seen = max_active_seen_;
    r.unknowns = solver_->unknown_count() - unknown0;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace dyncfg
