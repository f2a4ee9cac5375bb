import { describe, expect, it } from "vitest";

import { FileBrowser, joinPath, parentPath, renderFile, renderTree } from "../src/files";
import type { FileView, TreeView } from "../src/types";

describe("path helpers", () => {
  it("parentPath walks up and stops at the workspace root", () => {
    expect(parentPath("reports/milestone_001/overview.md")).toBe("reports/milestone_001");
    expect(parentPath("reports/milestone_001")).toBe("reports");
    expect(parentPath("reports")).toBe(".");
    expect(parentPath(".")).toBe(".");
    expect(parentPath("")).toBe(".");
  });

  it("joinPath treats the root as empty", () => {
    expect(joinPath(".", "reports")).toBe("reports");
    expect(joinPath("reports", "milestone_001")).toBe("reports/milestone_001");
    expect(joinPath("", "journal.jsonl")).toBe("journal.jsonl");
  });
});

describe("FileBrowser", () => {
  const tree: TreeView = {
    path: ".",
    entries: [
      { name: "logs", dir: true, size: null },
      { name: "reports", dir: true, size: null },
      { name: "journal.jsonl", dir: false, size: 104550 },
    ],
  };
  const reportsTree: TreeView = {
    path: "reports",
    entries: [{ name: "milestone_001", dir: true, size: null }],
  };
  const file: FileView = {
    path: "reports/milestone_001/overview.md",
    content: "# Milestone 1\n",
    truncated: false,
    bytes: 14,
  };

  function fakeApi() {
    const seen: string[] = [];
    const api = {
      tree: async (path: string) => {
        seen.push(`tree:${path}`);
        return path === "reports" ? reportsTree : tree;
      },
      file: async (path: string) => {
        seen.push(`file:${path}`);
        return file;
      },
    };
    return { api, seen };
  }

  it("navigates directories and opens files", async () => {
    const { api, seen } = fakeApi();
    const browser = new FileBrowser(api);
    await browser.openDir(".");
    expect(browser.tree?.entries.map((e) => e.name)).toEqual([
      "logs",
      "reports",
      "journal.jsonl",
    ]);

    await browser.openDir("reports");
    expect(browser.path).toBe("reports");
    await browser.openFile("reports/milestone_001/overview.md");
    expect(browser.file?.content).toContain("Milestone 1");
    expect(seen).toEqual([
      "tree:.",
      "tree:reports",
      "file:reports/milestone_001/overview.md",
    ]);
  });

  it("up() goes to the parent directory and drops the open file", async () => {
    const { api } = fakeApi();
    const browser = new FileBrowser(api);
    await browser.openDir("reports");
    await browser.openFile("reports/milestone_001/overview.md");
    await browser.up();
    expect(browser.path).toBe(".");
    expect(browser.file).toBeNull();
  });
});

describe("rendering", () => {
  it("marks directories and shows file sizes", () => {
    const html = renderTree({
      path: ".",
      entries: [
        { name: "logs", dir: true, size: null },
        { name: "journal.jsonl", dir: false, size: 104550 },
      ],
    });
    expect(html).toContain("logs/");
    expect(html).toContain("104550");
    expect(html).toContain('class="dir"');
    expect(html).toContain('class="file"');
  });

  it("shows a truncation banner for capped files", () => {
    const html = renderFile({
      path: "logs/huge.log",
      content: "x".repeat(64),
      truncated: true,
      bytes: 5_000_000,
    });
    expect(html).toContain("Truncated");
    expect(html).toContain("5000000 bytes");
  });

  it("omits the banner for complete files and escapes content", () => {
    const html = renderFile({
      path: "notes.md",
      content: "<b>not markup</b>",
      truncated: false,
      bytes: 17,
    });
    expect(html).not.toContain("Truncated");
    expect(html).toContain("&lt;b&gt;not markup&lt;/b&gt;");
  });
});
