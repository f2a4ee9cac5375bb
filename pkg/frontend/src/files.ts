/** Workspace browser: directory tree plus read-only file viewer. */

import { escapeHtml } from "./render";
import type { FileView, TreeView } from "./types";

export function parentPath(path: string): string {
  if (path === "." || path === "") return ".";
  const i = path.lastIndexOf("/");
  return i < 0 ? "." : path.slice(0, i);
}

export function joinPath(dir: string, name: string): string {
  return dir === "." || dir === "" ? name : `${dir}/${name}`;
}

export class FileBrowser {
  path = ".";
  tree: TreeView | null = null;
  file: FileView | null = null;

  constructor(
    private api: {
      tree(path: string): Promise<TreeView>;
      file(path: string): Promise<FileView>;
    },
  ) {}

  async openDir(path: string): Promise<void> {
    this.tree = await this.api.tree(path);
    this.path = path;
    this.file = null;
  }

  async openFile(path: string): Promise<void> {
    this.file = await this.api.file(path);
  }

  async up(): Promise<void> {
    await this.openDir(parentPath(this.path));
  }
}

export function renderTree(view: TreeView): string {
  const rows = view.entries
    .map((e) => {
      const cls = e.dir ? "dir" : "file";
      const size = e.size === null ? "" : String(e.size);
      return `<li class="${cls}" data-name="${escapeHtml(e.name)}"><span class="entry-name">${escapeHtml(e.name)}${e.dir ? "/" : ""}</span><span class="entry-size">${size}</span></li>`;
    })
    .join("\n");
  return `<div class="tree" data-path="${escapeHtml(view.path)}">
<p class="tree-path">${escapeHtml(view.path)}</p>
<ul>
${rows}
</ul>
</div>`;
}

export function renderFile(view: FileView): string {
  const banner = view.truncated
    ? `<p class="truncated">Truncated: this file is ${view.bytes} bytes; only the beginning is shown.</p>`
    : "";
  return `<div class="file-view" data-path="${escapeHtml(view.path)}">
<p class="file-path">${escapeHtml(view.path)} <small>(${view.bytes} bytes)</small></p>
${banner}
<pre>${escapeHtml(view.content)}</pre>
</div>`;
}
