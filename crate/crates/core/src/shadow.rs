//! Declared-width tracking for registers and stack slots.
//!
//! The engine knows the symbolic formula for every input-derived value, but
//! a formula alone cannot tell an intentional narrowing from an accidental
//! one. This module tracks how many low bytes of each register and stack
//! slot the program has treated as one integer, so the checker can compare
//! the width a value was produced at against the width it is consumed at.
//!
//! Sizes are in bytes and come from the operand widths the program itself
//! uses: a 4-byte read marks its destination as 4 wide, storing `ax` into a
//! word slot marks the slot as at most 2 wide, and so on. Tracking never
//! grows a value's width on its own; only a fresh read or a wider store of
//! a wider value can do that.

use std::collections::BTreeMap;

use crate::isa::{Reg, RegSlice, STACK_TOP};

/// One call frame's tracked stack slots, keyed by absolute address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameShadow {
    /// Stack pointer value immediately after the call that created the
    /// frame. Addresses at or above it belong to the caller.
    pub entry_rsp: u64,
    slots: BTreeMap<u64, u32>,
}

impl FrameShadow {
    fn new(entry_rsp: u64) -> FrameShadow {
        FrameShadow {
            entry_rsp,
            slots: BTreeMap::new(),
        }
    }

    fn get(&self, addr: u64) -> Option<u32> {
        self.slots.get(&addr).copied()
    }

    /// Drop every slot that overlaps `[addr, addr + size)`. Tracked slots
    /// are at most 8 bytes wide, so only starts within 7 bytes below the
    /// range can reach into it.
    fn clear_overlaps(&mut self, addr: u64, size: u32) {
        let from = addr.saturating_sub(7);
        let end = addr.saturating_add(size as u64);
        let doomed: Vec<u64> = self
            .slots
            .range(from..end)
            .filter(|&(&a, &s)| a.saturating_add(s as u64) > addr)
            .map(|(&a, _)| a)
            .collect();
        for a in doomed {
            self.slots.remove(&a);
        }
    }

    fn insert(&mut self, addr: u64, size: u32) {
        self.slots.insert(addr, size);
    }

    pub fn slots(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.slots.iter().map(|(&a, &s)| (a, s))
    }
}

/// Width tracking across the whole machine: one size per register plus a
/// stack of per-frame slot maps.
#[derive(Debug, Clone)]
pub struct ShadowState {
    regs: BTreeMap<Reg, u32>,
    frames: Vec<FrameShadow>,
}

/// What the value being stored is, as far as tracking goes.
#[derive(Debug, Clone, Copy)]
pub enum StoreContent {
    /// Comes from a register that may carry a tracked width.
    FromReg(Reg),
    /// Comes from a source already known to carry this width, such as a
    /// tracked stack slot being pushed.
    Tracked(u32),
    /// An immediate or other width-less source.
    Plain,
}

impl Default for ShadowState {
    fn default() -> ShadowState {
        ShadowState::new()
    }
}

impl ShadowState {
    pub fn new() -> ShadowState {
        ShadowState {
            regs: BTreeMap::new(),
            frames: vec![FrameShadow::new(STACK_TOP)],
        }
    }

    pub fn tracked_reg(&self, reg: Reg) -> Option<u32> {
        self.regs.get(&reg).copied()
    }

    pub fn set_reg(&mut self, reg: Reg, size: u32) {
        self.regs.insert(reg, size);
    }

    pub fn clear_reg(&mut self, reg: Reg) {
        self.regs.remove(&reg);
    }

    pub fn frame_depth(&self) -> usize {
        self.frames.len()
    }

    pub fn current_frame(&self) -> &FrameShadow {
        self.frames.last().unwrap()
    }

    /// Frames from outermost to innermost.
    pub fn frames(&self) -> impl Iterator<Item = &FrameShadow> {
        self.frames.iter()
    }

    /// Tracked registers in a stable order.
    pub fn tracked_regs(&self) -> impl Iterator<Item = (Reg, u32)> + '_ {
        self.regs.iter().map(|(&r, &s)| (r, s))
    }

    /// Look a slot up in the current frame; on a miss, addresses at or
    /// above the frame's entry rsp also consult the caller's frame, since
    /// that is where stack-passed arguments live.
    pub fn lookup_stack(&self, addr: u64) -> Option<u32> {
        let cur = self.frames.last().unwrap();
        if let Some(s) = cur.get(addr) {
            return Some(s);
        }
        if addr >= cur.entry_rsp && self.frames.len() > 1 {
            return self.frames[self.frames.len() - 2].get(addr);
        }
        None
    }

    /// The frame a store to `addr` lands in: the caller's when the address
    /// sits in the argument region above the current entry rsp.
    fn store_frame(&mut self, addr: u64) -> &mut FrameShadow {
        let idx = if self.frames.len() > 1 && addr >= self.frames.last().unwrap().entry_rsp {
            self.frames.len() - 2
        } else {
            self.frames.len() - 1
        };
        &mut self.frames[idx]
    }

    /// A store always invalidates whatever it overlaps. A symbolic store
    /// then tracks the slot at the stored width, capped by the width the
    /// source register was tracked at; a concrete store leaves the slot
    /// untracked.
    pub fn on_store(&mut self, addr: u64, size: u32, content: StoreContent, symbolic: bool) {
        let tracked = match content {
            StoreContent::FromReg(r) => self.tracked_reg(r),
            StoreContent::Tracked(t) => Some(t),
            StoreContent::Plain => None,
        };
        let frame = self.store_frame(addr);
        frame.clear_overlaps(addr, size);
        if symbolic {
            frame.insert(addr, tracked.unwrap_or(size).min(size));
        }
    }

    /// A load tracks the destination at the slot's width capped by the
    /// operand width. A symbolic load from an untracked slot falls back to
    /// the operand width; a concrete load clears the register.
    pub fn on_load(&mut self, dest: RegSlice, addr: u64, symbolic: bool) {
        if !symbolic {
            self.clear_reg(dest.reg);
            return;
        }
        let size = dest.size_bytes();
        let tracked = self.lookup_stack(addr).unwrap_or(size).min(size);
        self.regs.insert(dest.reg, tracked);
    }

    /// Register-to-register moves, including the widening `movsx`/`movzx`
    /// forms, propagate the source width capped by the source operand
    /// width. Widening never grows tracking: the extension bits carry no
    /// information of their own.
    pub fn on_reg_move(&mut self, dest: RegSlice, src: RegSlice, symbolic: bool) {
        if !symbolic {
            self.clear_reg(dest.reg);
            return;
        }
        let src_size = src.size_bytes();
        let tracked = self
            .tracked_reg(src.reg)
            .unwrap_or(src_size)
            .min(src_size);
        self.regs.insert(dest.reg, tracked);
    }

    /// Any other register write (arithmetic, immediates): a symbolic
    /// result is tracked at the destination operand width, a concrete
    /// result clears the register.
    pub fn on_reg_write(&mut self, dest: RegSlice, symbolic: bool) {
        if symbolic {
            self.regs.insert(dest.reg, dest.size_bytes());
        } else {
            self.clear_reg(dest.reg);
        }
    }

    /// `cbw`/`cwde`/`cdqe` sign-extend the low `source_bytes` of rax in
    /// place. The result is determined by those bytes, so tracking settles
    /// at the source width (or stays narrower if it already was).
    pub fn on_convert(&mut self, source_bytes: u32, symbolic: bool) {
        if !symbolic {
            self.clear_reg(Reg::Rax);
            return;
        }
        let tracked = self
            .tracked_reg(Reg::Rax)
            .unwrap_or(source_bytes)
            .min(source_bytes);
        self.regs.insert(Reg::Rax, tracked);
    }

    /// A pop takes the slot's tracked width as-is when one starts exactly
    /// at rsp, and clears the register otherwise. The popped range is dead
    /// stack, so its slots are dropped either way.
    pub fn on_pop(&mut self, dest: RegSlice, rsp: u64, size: u32) {
        let frame = self.frames.last_mut().unwrap();
        let tracked = frame.get(rsp);
        frame.clear_overlaps(rsp, size);
        match tracked {
            Some(t) => {
                self.regs.insert(dest.reg, t);
            }
            None => self.clear_reg(dest.reg),
        }
    }

    /// A call stores the return index over `[entry_rsp, entry_rsp + 8)`,
    /// which invalidates anything there, then opens a fresh frame.
    pub fn on_call(&mut self, entry_rsp: u64) {
        self.frames
            .last_mut()
            .unwrap()
            .clear_overlaps(entry_rsp, 8);
        self.frames.push(FrameShadow::new(entry_rsp));
    }

    /// Returning discards the frame and every local slot tracked in it.
    pub fn on_ret(&mut self) {
        if self.frames.len() > 1 {
            self.frames.pop();
        }
    }

    /// A read intrinsic declares its destination at exactly the read
    /// width, whether it lands in a register or memory.
    pub fn on_read_reg(&mut self, dest: RegSlice, width_bytes: u32) {
        self.regs.insert(dest.reg, width_bytes);
    }

    pub fn on_read_mem(&mut self, addr: u64, width_bytes: u32) {
        let frame = self.store_frame(addr);
        frame.clear_overlaps(addr, width_bytes);
        frame.insert(addr, width_bytes);
    }

    /// The print intrinsic models an external call that clobbers the
    /// return-value register.
    pub fn on_print(&mut self) {
        self.clear_reg(Reg::Rax);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::reg_slice;

    fn r(name: &str) -> RegSlice {
        reg_slice(name).unwrap()
    }

    #[test]
    fn read_declares_exact_width() {
        let mut s = ShadowState::new();
        s.on_read_reg(r("eax"), 4);
        assert_eq!(s.tracked_reg(Reg::Rax), Some(4));
        s.on_read_mem(STACK_TOP - 8, 4);
        assert_eq!(s.lookup_stack(STACK_TOP - 8), Some(4));
    }

    #[test]
    fn store_caps_slot_at_source_tracking() {
        // rax carries a 4-byte value; storing ax keeps only 2 of them,
        // and storing the full rax keeps all 4 even through a wider slot
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rax, 4);
        s.on_store(0x7FFE_FF00, 2, StoreContent::FromReg(Reg::Rax), true);
        assert_eq!(s.lookup_stack(0x7FFE_FF00), Some(2));
        s.on_store(0x7FFE_FF10, 8, StoreContent::FromReg(Reg::Rax), true);
        assert_eq!(s.lookup_stack(0x7FFE_FF10), Some(4));
    }

    #[test]
    fn concrete_store_untracks_the_slot() {
        let mut s = ShadowState::new();
        s.on_read_mem(0x7FFE_FF00, 4);
        s.on_store(0x7FFE_FF00, 4, StoreContent::Plain, false);
        assert_eq!(s.lookup_stack(0x7FFE_FF00), None);
    }

    #[test]
    fn overlapping_store_clears_neighbours() {
        // a 4-byte slot at 0x100 below top; a 1-byte store into its middle
        // invalidates it without tracking anything new
        let a = STACK_TOP - 0x100;
        let mut s = ShadowState::new();
        s.on_read_mem(a, 4);
        s.on_store(a + 2, 1, StoreContent::Plain, false);
        assert_eq!(s.lookup_stack(a), None);
        // non-overlapping neighbours survive
        s.on_read_mem(a, 2);
        s.on_read_mem(a + 2, 2);
        s.on_store(a + 2, 2, StoreContent::Plain, false);
        assert_eq!(s.lookup_stack(a), Some(2));
        assert_eq!(s.lookup_stack(a + 2), None);
    }

    #[test]
    fn load_caps_register_at_slot_width() {
        // a 2-byte slot loaded through a 4-byte operand stays 2 wide
        let a = STACK_TOP - 0x40;
        let mut s = ShadowState::new();
        s.on_read_mem(a, 2);
        s.on_load(r("edx"), a, true);
        assert_eq!(s.tracked_reg(Reg::Rdx), Some(2));
        // a 4-byte slot loaded through a 2-byte operand narrows to 2
        s.on_read_mem(a + 8, 4);
        s.on_load(r("cx"), a + 8, true);
        assert_eq!(s.tracked_reg(Reg::Rcx), Some(2));
    }

    #[test]
    fn untracked_symbolic_load_uses_operand_width() {
        let mut s = ShadowState::new();
        s.on_load(r("rax"), STACK_TOP - 8, true);
        assert_eq!(s.tracked_reg(Reg::Rax), Some(8));
        s.on_load(r("rax"), STACK_TOP - 8, false);
        assert_eq!(s.tracked_reg(Reg::Rax), None);
    }

    #[test]
    fn widening_move_keeps_source_width() {
        // movsx edx, al on a 4-tracked rax: only al's byte moves
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rax, 4);
        s.on_reg_move(r("edx"), r("al"), true);
        assert_eq!(s.tracked_reg(Reg::Rdx), Some(1));
        // movzx from a 2-tracked word slot source register
        s.set_reg(Reg::Rbx, 2);
        s.on_reg_move(r("ecx"), r("bx"), true);
        assert_eq!(s.tracked_reg(Reg::Rcx), Some(2));
    }

    #[test]
    fn plain_move_caps_at_operand_width() {
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rcx, 1);
        s.on_reg_move(r("edx"), r("ecx"), true);
        assert_eq!(s.tracked_reg(Reg::Rdx), Some(1));
        s.clear_reg(Reg::Rcx);
        s.on_reg_move(r("edx"), r("ecx"), true);
        assert_eq!(s.tracked_reg(Reg::Rdx), Some(4));
    }

    #[test]
    fn arithmetic_tracks_at_destination_width() {
        // add eax, ecx with symbolic result: the value is now int-sized
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rax, 2);
        s.on_reg_write(r("eax"), true);
        assert_eq!(s.tracked_reg(Reg::Rax), Some(4));
        // xor eax, eax zeroes concretely and drops tracking
        s.on_reg_write(r("eax"), false);
        assert_eq!(s.tracked_reg(Reg::Rax), None);
    }

    #[test]
    fn conversions_settle_at_source_width() {
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rax, 4);
        s.on_convert(2, true); // cwde
        assert_eq!(s.tracked_reg(Reg::Rax), Some(2));
        s.set_reg(Reg::Rax, 1);
        s.on_convert(2, true); // cwde on a byte-wide value
        assert_eq!(s.tracked_reg(Reg::Rax), Some(1));
        s.on_convert(4, false);
        assert_eq!(s.tracked_reg(Reg::Rax), None);
    }

    #[test]
    fn pop_takes_slot_width_directly() {
        let a = STACK_TOP - 0x20;
        let mut s = ShadowState::new();
        s.on_store(a, 4, StoreContent::Plain, true);
        s.on_pop(r("rcx"), a, 8);
        assert_eq!(s.tracked_reg(Reg::Rcx), Some(4));
        // popping dead stack with no slot clears the register
        s.set_reg(Reg::Rdx, 4);
        s.on_pop(r("rdx"), a, 8);
        assert_eq!(s.tracked_reg(Reg::Rdx), None);
    }

    #[test]
    fn call_invalidates_return_slot_and_opens_frame() {
        let a = STACK_TOP - 0x10;
        let mut s = ShadowState::new();
        s.on_store(a, 8, StoreContent::Plain, true);
        assert_eq!(s.lookup_stack(a), Some(8));
        s.on_call(a);
        assert_eq!(s.frame_depth(), 2);
        // the return index overwrote the old slot in the caller frame
        s.on_ret();
        assert_eq!(s.lookup_stack(a), None);
    }

    #[test]
    fn argument_region_falls_through_to_caller() {
        let entry = STACK_TOP - 0x10;
        let mut s = ShadowState::new();
        s.on_store(entry + 8, 2, StoreContent::Plain, true);
        s.on_call(entry);
        // above entry rsp: visible from the callee
        assert_eq!(s.lookup_stack(entry + 8), Some(2));
        // below entry rsp: strictly the callee's own territory
        s.on_store(entry - 8, 4, StoreContent::Plain, true);
        assert_eq!(s.lookup_stack(entry - 8), Some(4));
        s.on_ret();
        // callee locals die with the frame, the caller slot survives
        assert_eq!(s.lookup_stack(entry - 8), None);
        assert_eq!(s.lookup_stack(entry + 8), Some(2));
    }

    #[test]
    fn callee_store_to_argument_region_updates_caller_frame() {
        let entry = STACK_TOP - 0x10;
        let mut s = ShadowState::new();
        s.on_call(entry);
        s.on_store(entry + 8, 4, StoreContent::Plain, true);
        s.on_ret();
        assert_eq!(s.lookup_stack(entry + 8), Some(4));
    }

    #[test]
    fn print_clobbers_rax_only() {
        let mut s = ShadowState::new();
        s.set_reg(Reg::Rax, 4);
        s.set_reg(Reg::Rcx, 2);
        s.on_print();
        assert_eq!(s.tracked_reg(Reg::Rax), None);
        assert_eq!(s.tracked_reg(Reg::Rcx), Some(2));
    }
}
