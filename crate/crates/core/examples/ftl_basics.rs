//! The device API by hand: a FlashAlloc-ed object is written into its own
//! block and its trim erases that block outright, while the same object
//! written without FlashAlloc shares blocks with a neighbour.

use fasim::{Chunk, Ftl, FtlConfig, Geometry};

fn show(label: &str, ftl: &Ftl) {
    let c = ftl.counters();
    let r = ftl.gc_region_report();
    println!(
        "{label:<28} programs={:<5} copybacks={:<3} trim_invalidations={:<4} trim_erases={} fa/normal/free={}/{}/{}",
        c.physical_programs, c.copyback_programs, c.trim_page_invalidations, c.trim_block_erases,
        r.fa_blocks, r.normal_blocks, r.free_blocks
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = Geometry { total_blocks: 16, pages_per_block: 64, page_size: 4096, channels: 2, op_fraction: 0.25 };
    let mut ftl = Ftl::new(g, FtlConfig::for_geometry(&g))?;

    let id = ftl.flash_alloc(&[Chunk::new(0, 64)])?;
    println!("allocated {id}; probe(10) = {:?}", ftl.probe(10));
    // a neighbour writes while the object is being filled
    for k in 0..8 {
        ftl.host_write(k * 8, 8, 1_000 + k * 8)?;
        ftl.host_write(512 + k * 8, 8, 5_000 + k * 8)?;
    }
    show("after interleaved writes", &ftl);
    println!("instance full, probe(10) = {:?}", ftl.probe(10));
    ftl.host_trim(0, 64)?;
    show("after trimming the object", &ftl);

    // the same pattern without an allocation
    for k in 0..8 {
        ftl.host_write(64 + k * 8, 8, 9_000 + k * 8)?;
        ftl.host_write(600 + k * 8, 8, 9_500 + k * 8)?;
    }
    ftl.host_trim(64, 64)?;
    show("same pattern, no FlashAlloc", &ftl);
    ftl.audit()?;
    Ok(())
}
