//! Per-thread reuse of large temporary buffers. Fresh multi-megabyte
//! allocations spend most of their time in page faults, so column buffers
//! are recycled instead.

use std::cell::RefCell;
use std::ops::{Deref, DerefMut};

use super::real::Real;

pub(crate) type Pool<T> = RefCell<Vec<Vec<T>>>;

/// Buffers smaller than this are allocated normally.
const MIN_POOLED: usize = 1 << 15;
const KEEP: usize = 8;

pub(crate) struct Scratch<T: Real> {
    buf: Vec<T>,
}

/// A zero-filled buffer of `len` elements.
pub(crate) fn zeroed<T: Real>(len: usize) -> Scratch<T> {
    let mut buf = if len >= MIN_POOLED {
        T::scratch_pool()
            .try_with(|p| {
                let mut p = p.borrow_mut();
                // smallest buffer that fits, else the largest one
                let pick = p
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.capacity() >= len)
                    .min_by_key(|(_, b)| b.capacity())
                    .or_else(|| p.iter().enumerate().max_by_key(|(_, b)| b.capacity()))
                    .map(|(i, _)| i);
                pick.map(|i| p.swap_remove(i)).unwrap_or_default()
            })
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    buf.clear();
    buf.resize(len, T::zero());
    Scratch { buf }
}

impl<T: Real> Drop for Scratch<T> {
    fn drop(&mut self) {
        if self.buf.capacity() < MIN_POOLED {
            return;
        }
        let buf = std::mem::take(&mut self.buf);
        let _ = T::scratch_pool().try_with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < KEEP {
                p.push(buf);
            } else if let Some(small) = p.iter_mut().min_by_key(|b| b.capacity()) {
                if small.capacity() < buf.capacity() {
                    *small = buf;
                }
            }
        });
    }
}

impl<T: Real> Deref for Scratch<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.buf
    }
}

impl<T: Real> DerefMut for Scratch<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.buf
    }
}
